#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace spose {

// Base class for all toolkit errors. CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, const std::string& path, long line)
        : Error(path + ":" + std::to_string(line) + ": " + what),
          path_(path), line_(line) {}
    explicit ParseError(const std::string& what) : Error(what), line_(0) {}

    const std::string& path() const { return path_; }
    long line() const { return line_; }

private:
    std::string path_;
    long line_;
};

// Argument outside an operation's documented domain.
class DomainError : public Error {
public:
    using Error::Error;
};

using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
    if (sink) sink->push_back(std::move(message));
}

}  // namespace spose
