#pragma once

#include <stdexcept>
#include <string>

namespace kinetic_noise {

enum class ErrorKind {
    invalid_argument,
    domain_too_small,
    step_too_large,
    cfl_violation,
    non_convergence,
    invariant_violation,
    grid_mismatch,
    config,
    io,
};

const char* to_string(ErrorKind kind);

/// Library-wide exception. `kind` identifies the violated precondition so
/// callers (the CLI in particular) can report it without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace kinetic_noise
