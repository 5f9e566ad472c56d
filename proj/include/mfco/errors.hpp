#pragma once

#include <stdexcept>
#include <string>

namespace mfco {

/* Base class for all library errors. */
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/* Mismatched dimensions between operators, edges, or user inputs. */
class DimensionError : public Error {
public:
  explicit DimensionError(const std::string& what) : Error(what) {}
};

/* Invalid parameter values (singular diagonal, unsupported length, ...). */
class ValueError : public Error {
public:
  explicit ValueError(const std::string& what) : Error(what) {}
};

/* Problem failed disciplined-convexity verification. */
class DcpError : public Error {
public:
  explicit DcpError(const std::string& what) : Error(what) {}
};

}  // namespace mfco
