#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>

namespace fusedtree {

// Values double as CLI exit codes.
enum class ErrorCode : int { usage = 2, data = 3, numerical = 4 };

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorCode::usage, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorCode::data, what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ErrorCode::numerical, what) {}
};

namespace detail {

inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}

inline std::function<void(const std::string&)>& warning_handler() {
  static std::function<void(const std::string&)> handler = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return handler;
}

}  // namespace detail

/// Replace the sink for non-fatal diagnostics. Pass an empty function to silence them.
inline void set_warning_handler(std::function<void(const std::string&)> handler) {
  std::lock_guard<std::mutex> lock(detail::warning_mutex());
  detail::warning_handler() = std::move(handler);
}

inline void warn(const std::string& message) {
  std::lock_guard<std::mutex> lock(detail::warning_mutex());
  if (detail::warning_handler()) detail::warning_handler()(message);
}

}  // namespace fusedtree
