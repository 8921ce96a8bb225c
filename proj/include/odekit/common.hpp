#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace odekit {

// Every error carries the module and operation that raised it; the CLI
// prints them verbatim and maps the category to its exit code.
class Error : public std::runtime_error {
 public:
  enum class Kind { validation, internal };

  Error(Kind kind, std::string module, std::string op, const std::string& msg)
      : std::runtime_error(module + "." + op + ": " + msg),
        kind_(kind),
        module_(std::move(module)),
        op_(std::move(op)) {}

  Kind kind() const { return kind_; }
  const std::string& module_name() const { return module_; }
  const std::string& op_name() const { return op_; }

 private:
  Kind kind_;
  std::string module_;
  std::string op_;
};

[[noreturn]] inline void fail(const char* module, const char* op, const std::string& msg) {
  throw Error(Error::Kind::validation, module, op, msg);
}

inline void check(bool cond, const char* module, const char* op, const std::string& msg) {
  if (!cond) fail(module, op, msg);
}

// splitmix64: used to derive independent per-unit seeds (per record, per
// batch item) from one master seed, so results do not depend on scheduling.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream, uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ (0xa0761d6478bd642fULL * (stream + 1))) + index);
}

// Runs fn(i) for i in [0, n). Work items must be independent; any reduction
// over their results has to happen afterwards in index order.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int nw = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nw));
  for (int w = 0; w < nw; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += nw) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace odekit
