#pragma once

#include <stdexcept>
#include <string>

namespace shapereg {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes (input errors -> 2, solver failures -> 3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class SizeMismatchError : public InputError {
public:
    using InputError::InputError;
};

class TopologyMismatchError : public InputError {
public:
    using InputError::InputError;
};

class DegenerateMeshError : public Error {
public:
    DegenerateMeshError(std::size_t face, double area)
        : Error("degenerate face " + std::to_string(face) + " (area " + std::to_string(area) + ")"),
          face_(face), area_(area) {}
    std::size_t face() const noexcept { return face_; }
    double area() const noexcept { return area_; }

private:
    std::size_t face_;
    double area_;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

class SolverError : public Error {
public:
    using Error::Error;
};

} // namespace shapereg
