#include "hydra/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hydra {

void Fnv1a::update(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    state_ ^= p[i];
    state_ *= 0x100000001b3ULL;
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.digest();
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t parse_hex64(std::string_view s) {
  if (s.size() != 16) throw IntegrityError("malformed hash '" + std::string(s) + "'");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw IntegrityError("malformed hash '" + std::string(s) + "'");
  }
  return v;
}

namespace {
std::atomic<unsigned> g_workers{0};
}

unsigned default_workers() {
  unsigned w = g_workers.load();
  if (w == 0) w = std::max(1u, std::thread::hardware_concurrency());
  return w;
}

void set_default_workers(unsigned n) { g_workers.store(n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  unsigned workers) {
  if (workers == 0) workers = default_workers();
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t nw = std::min<std::size_t>(workers, n);
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mu;
  pool.reserve(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    const std::size_t lo = n * w / nw;
    const std::size_t hi = n * (w + 1) / nw;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace hydra
