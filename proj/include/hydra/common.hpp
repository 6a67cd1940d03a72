#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hydra {

// Error taxonomy. Each maps onto one status code of the C API.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Content hash or cross-artifact reference does not match.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// 64-bit FNV-1a, used for content addressing of artifacts.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n);
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <class T>
  void update_pod(const T& v) {
    update(&v, sizeof(T));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t h);
std::uint64_t parse_hex64(std::string_view s);

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; callers
// must write results by index so output never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  unsigned workers = 0);

// Worker count used when parallel_for is called with workers == 0.
unsigned default_workers();
void set_default_workers(unsigned n);

}  // namespace hydra
