#pragma once

#include <stdexcept>
#include <string>

namespace ccdf {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

struct BasisError : Error {
    using Error::Error;
};

struct DegeneracyError : Error {
    using Error::Error;
};

struct UnsupportedError : Error {
    using Error::Error;
};

struct ExportError : Error {
    using Error::Error;
};

class ConvergenceError : public Error {
  public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

  private:
    double residual_;
};

}  // namespace ccdf
