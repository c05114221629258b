#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "catsel/errors.hpp"

namespace catsel::test {

inline double ulp(double x) { return std::nextafter(std::abs(x), INFINITY) - std::abs(x); }

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

#ifdef DOCTEST_LIBRARY_INCLUDED
template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a catsel::Error");
  return ErrorCode::DomainError;
}
#endif

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("catsel-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace catsel::test
