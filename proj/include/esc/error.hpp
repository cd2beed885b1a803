#ifndef ESC_ERROR_HPP
#define ESC_ERROR_HPP

#include <stdexcept>
#include <string>

namespace esc {

// Exit codes used by the command-line front end.
enum class ErrorKind { usage = 1, data = 2, backend = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& m) : Error(ErrorKind::usage, m) {}
};

struct DataError : Error {
    explicit DataError(const std::string& m) : Error(ErrorKind::data, m) {}
};

struct BackendError : Error {
    explicit BackendError(const std::string& m) : Error(ErrorKind::backend, m) {}
};

inline const char* kind_name(ErrorKind k) {
    switch (k) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::data: return "data";
    case ErrorKind::backend: return "backend";
    }
    return "unknown";
}

} // namespace esc

#endif // ESC_ERROR_HPP
