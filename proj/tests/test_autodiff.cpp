#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>

#include "doctest.h"
#include "odekit/autodiff.hpp"
#include "odekit/checkpoint.hpp"
#include "odekit/common.hpp"
#include "odekit/gradcheck.hpp"
#include "odekit/kernels/kernels.hpp"

using namespace odekit;
using ad::Tape;
using ad::Tensor;
using ad::Value;

namespace {

Tensor random_tensor(std::mt19937_64& rng, int r, int c, const std::string& name,
                     double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(r, c);
  for (double& v : t.data) v = dist(rng);
  t.requires_grad = true;
  t.name = name;
  return t;
}

// Scalarizes an arbitrary output by weighting entries with fixed constants,
// so every output coordinate contributes a distinct gradient path.
Value weigh(Tape& tape, Value out, uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b9ULL);
  std::uniform_real_distribution<double> dist(0.1, 1.0);
  std::vector<double> w(tape.size(out));
  for (double& v : w) v = dist(rng);
  return tape.sum(tape.mul(out, tape.constant(tape.rows(out), tape.cols(out), std::move(w))));
}

using Builder = std::function<Value(Tape&, std::vector<Tensor>&)>;

// gradcheck for one primitive under random shapes/seeds.
void check_primitive(const char* label, const Builder& build, std::vector<Tensor> params,
                     uint64_t seed, double tol = 1e-5) {
  auto loss_fn = [&](bool compute_grads) {
    Tape tape;
    Value out = build(tape, params);
    Value loss = weigh(tape, out, seed);
    const double value = tape.scalar_value(loss);
    if (compute_grads) {
      tape.backward(loss);
      tape.apply_leaf_grads();
    }
    return value;
  };
  std::vector<Tensor*> ptrs;
  for (Tensor& t : params) ptrs.push_back(&t);
  ad::GradCheckReport report = ad::gradcheck(loss_fn, ptrs, 1e-5, tol);
  INFO(label << " max rel error " << report.max_rel_error);
  CHECK(report.pass);
}

}  // namespace

TEST_CASE("forward values of the activation primitives") {
  Tape tape;
  Value x = tape.constant(1, 1, {0.0});
  CHECK(tape.scalar_value(tape.sigmoid(x)) == 0.5);
  CHECK(tape.scalar_value(tape.softplus(x)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(tape.scalar_value(tape.tanh(x)) == 0.0);
  CHECK(tape.scalar_value(tape.relu(x)) == 0.0);
}

TEST_CASE("matmul forward equals the triple-loop oracle") {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor(rng, 2, 3, "a");
  Tensor b = random_tensor(rng, 3, 2, "b");
  Tape tape;
  Value out = tape.matmul(tape.leaf(a), tape.leaf(b));
  auto got = tape.values(out);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a.at(i, k) * b.at(k, j);
      CHECK(got[static_cast<size_t>(i) * 2 + j] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("backward of x squared at x = 3 is 6") {
  Tensor x(1, 1, 3.0);
  x.requires_grad = true;
  x.name = "x";
  Tape tape;
  Value xv = tape.leaf(x);
  Value loss = tape.sum(tape.mul(xv, xv));
  tape.backward(loss);
  tape.apply_leaf_grads();
  CHECK(x.grad[0] == 6.0);
}

TEST_CASE("backward of sigmoid at 0 is 0.25") {
  Tensor x(1, 1, 0.0);
  x.requires_grad = true;
  Tape tape;
  Value loss = tape.sum(tape.sigmoid(tape.leaf(x)));
  tape.backward(loss);
  tape.apply_leaf_grads();
  CHECK(x.grad[0] == 0.25);
}

TEST_CASE("three-layer composite matches central finite differences") {
  for (uint64_t seed : {1, 2, 3, 4, 5}) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> params;
    params.push_back(random_tensor(rng, 2, 3, "x"));
    params.push_back(random_tensor(rng, 3, 4, "w1"));
    params.push_back(random_tensor(rng, 4, 2, "w2"));
    check_primitive(
        "matmul-tanh-matmul-sum",
        [](Tape& t, std::vector<Tensor>& p) {
          return t.matmul(t.tanh(t.matmul(t.leaf(p[0]), t.leaf(p[1]))), t.leaf(p[2]));
        },
        std::move(params), seed);
  }
}

TEST_CASE("every primitive backward rule passes gradcheck over 100 random shapes") {
  std::mt19937_64 shape_rng(42);
  std::uniform_int_distribution<int> dim(1, 5);
  int runs = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed * 7919 + 13);
    const int r = dim(shape_rng), c = dim(shape_rng), k = dim(shape_rng);

    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, k, "a"));
      p.push_back(random_tensor(rng, k, c, "b"));
      check_primitive("matmul", [](Tape& t, std::vector<Tensor>& p) {
        return t.matmul(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "a"));
      p.push_back(random_tensor(rng, r, c, "b"));
      check_primitive("add", [](Tape& t, std::vector<Tensor>& p) {
        return t.add(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "a"));
      p.push_back(random_tensor(rng, r, c, "b"));
      check_primitive("sub", [](Tape& t, std::vector<Tensor>& p) {
        return t.sub(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "a"));
      p.push_back(random_tensor(rng, r, c, "b"));
      check_primitive("mul", [](Tape& t, std::vector<Tensor>& p) {
        return t.mul(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    {
      // Keep entries separated so finite differences cannot cross the kink.
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "a"));
      p.push_back(random_tensor(rng, r, c, "b"));
      for (size_t i = 0; i < p[0].size(); ++i) {
        if (std::fabs(p[0].data[i] - p[1].data[i]) < 1e-2) p[0].data[i] += 0.05;
      }
      check_primitive("maximum", [](Tape& t, std::vector<Tensor>& p) {
        return t.maximum(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    for (const char* act : {"sigmoid", "tanh", "softplus"}) {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      std::string name = act;
      check_primitive(act, [name](Tape& t, std::vector<Tensor>& p) {
        if (name == "sigmoid") return t.sigmoid(t.leaf(p[0]));
        if (name == "tanh") return t.tanh(t.leaf(p[0]));
        return t.softplus(t.leaf(p[0]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      for (double& v : p[0].data) {
        if (std::fabs(v) < 1e-2) v += 0.05;  // away from the relu kink
      }
      check_primitive("relu", [](Tape& t, std::vector<Tensor>& p) {
        return t.relu(t.leaf(p[0]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x", 0.5, 3.0));  // positive domain
      check_primitive("rsqrt", [](Tape& t, std::vector<Tensor>& p) {
        return t.rsqrt(t.leaf(p[0]), 1e-5);
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "a"));
      p.push_back(random_tensor(rng, r, k, "b"));
      check_primitive("concat_cols", [](Tape& t, std::vector<Tensor>& p) {
        return t.concat_cols(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "a"));
      p.push_back(random_tensor(rng, k, c, "b"));
      check_primitive("concat_rows", [](Tape& t, std::vector<Tensor>& p) {
        return t.concat_rows(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    if (c >= 2) {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      const int len = c - 1;
      check_primitive("slice_cols", [len](Tape& t, std::vector<Tensor>& p) {
        return t.slice_cols(t.leaf(p[0]), 1, len);
      }, std::move(p), seed);
    }
    if (r >= 2) {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      const int len = r - 1;
      check_primitive("slice_rows", [len](Tape& t, std::vector<Tensor>& p) {
        return t.slice_rows(t.leaf(p[0]), 0, len);
      }, std::move(p), seed);
    }
    if (r >= 3) {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      const int count = (r - 2) / 2 + 1;  // rows 1, 3, ... strictly below r
      check_primitive("stride_rows", [count](Tape& t, std::vector<Tensor>& p) {
        return t.stride_rows(t.leaf(p[0]), 1, 2, count);
      }, std::move(p), seed);
    }
    for (const char* red : {"sum", "mean", "mean_rows", "l2norm"}) {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x", 0.5, 2.0));  // keeps l2norm away from 0
      std::string name = red;
      check_primitive(red, [name](Tape& t, std::vector<Tensor>& p) {
        if (name == "sum") return t.sum(t.leaf(p[0]));
        if (name == "mean") return t.mean(t.leaf(p[0]));
        if (name == "mean_rows") return t.mean_rows(t.leaf(p[0]));
        return t.l2norm(t.leaf(p[0]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      // Separate the maximum so the argmax is stable under the FD step.
      size_t arg = 0;
      for (size_t i = 1; i < p[0].size(); ++i)
        if (p[0].data[i] > p[0].data[arg]) arg = i;
      p[0].data[arg] += 0.1;
      check_primitive("reduce_max", [](Tape& t, std::vector<Tensor>& p) {
        return t.reduce_max(t.leaf(p[0]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      p.push_back(random_tensor(rng, 1, c, "bias"));
      check_primitive("add_bias", [](Tape& t, std::vector<Tensor>& p) {
        return t.add_bias(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      p.push_back(random_tensor(rng, 1, c, "row"));
      check_primitive("mul_rows", [](Tape& t, std::vector<Tensor>& p) {
        return t.mul_rows(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      check_primitive("scale", [](Tape& t, std::vector<Tensor>& p) {
        return t.scale(t.leaf(p[0]), -1.3);
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      p.push_back(random_tensor(rng, 1, 1, "s", 0.5, 2.0));
      check_primitive("mul_scalar", [](Tape& t, std::vector<Tensor>& p) {
        return t.mul_scalar(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    {
      std::vector<Tensor> p;
      p.push_back(random_tensor(rng, r, c, "x"));
      p.push_back(random_tensor(rng, 1, 1, "s", 0.7, 2.0));
      check_primitive("div_scalar", [](Tape& t, std::vector<Tensor>& p) {
        return t.div_scalar(t.leaf(p[0]), t.leaf(p[1]));
      }, std::move(p), seed);
    }
    ++runs;
  }
  CHECK(runs == 100);
}

TEST_CASE("fan-out accumulates gradients exactly") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor(rng, 2, 3, "x");

  auto grad_of = [&](bool doubled) {
    x.zero_grad();
    Tape tape;
    Value xv = tape.leaf(x);
    Value g = tape.tanh(xv);
    Value out = doubled ? tape.add(g, g) : g;
    tape.backward(tape.sum(out));
    tape.apply_leaf_grads();
    return x.grad;
  };
  auto single = grad_of(false);
  auto doubled = grad_of(true);
  for (size_t i = 0; i < single.size(); ++i) CHECK(doubled[i] == 2.0 * single[i]);
}

TEST_CASE("identical tapes give bit-identical gradients, on every backend") {
  std::mt19937_64 rng(9);
  Tensor a = random_tensor(rng, 4, 5, "a");
  Tensor b = random_tensor(rng, 5, 3, "b");

  auto run = [&]() {
    a.zero_grad();
    b.zero_grad();
    Tape tape;
    Value out = tape.l2norm(tape.sigmoid(tape.matmul(tape.leaf(a), tape.leaf(b))));
    tape.backward(out);
    tape.apply_leaf_grads();
    auto ga = a.grad;
    auto gb = b.grad;
    ga.insert(ga.end(), gb.begin(), gb.end());
    return ga;
  };
  auto first = run();
  auto second = run();
  CHECK(std::memcmp(first.data(), second.data(), first.size() * sizeof(double)) == 0);
  if (kern::avx2_supported()) {
    kern::set_backend(kern::Backend::scalar);
    auto scalar = run();
    kern::set_backend(kern::Backend::avx2);
    CHECK(std::memcmp(first.data(), scalar.data(), first.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("a tape refuses a second backward") {
  Tensor x(1, 1, 1.0);
  x.requires_grad = true;
  Tape tape;
  Value loss = tape.sum(tape.leaf(x));
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("gradcheck on a linear function agrees to 1e-10") {
  std::mt19937_64 rng(21);
  Tensor w = random_tensor(rng, 1, 6, "w");
  Tensor x = random_tensor(rng, 1, 6, "x");
  x.requires_grad = false;
  auto loss_fn = [&](bool compute) {
    Tape tape;
    Value out = tape.sum(tape.mul(tape.leaf(w), tape.leaf(x)));
    if (compute) {
      tape.backward(out);
      tape.apply_leaf_grads();
    }
    return tape.scalar_value(out);
  };
  ad::GradCheckReport r = ad::gradcheck(loss_fn, {&w}, 1e-5, 1e-10);
  CHECK(r.pass);
  CHECK(r.max_rel_error <= 1e-10);
}

TEST_CASE("gradcheck flags an intentionally wrong gradient") {
  std::mt19937_64 rng(23);
  Tensor w = random_tensor(rng, 1, 4, "w");
  auto loss_fn = [&](bool compute) {
    Tape tape;
    Value out = tape.sum(tape.tanh(tape.leaf(w)));
    const double v = tape.scalar_value(out);
    if (compute) {
      tape.backward(out);
      tape.apply_leaf_grads();
      for (double& g : w.grad) g *= 1.5;  // corrupt
    }
    return v;
  };
  ad::GradCheckReport r = ad::gradcheck(loss_fn, {&w}, 1e-5, 1e-5);
  CHECK_FALSE(r.pass);
}

TEST_CASE("gradcheck fails on non-finite analytic gradients") {
  Tensor w(1, 2, 1.0);
  w.requires_grad = true;
  w.name = "w";
  auto loss_fn = [&](bool compute) {
    Tape tape;
    Value out = tape.sum(tape.leaf(w));
    if (compute) {
      tape.backward(out);
      tape.apply_leaf_grads();
      w.grad[0] = std::numeric_limits<double>::quiet_NaN();
    }
    return tape.scalar_value(out);
  };
  ad::GradCheckReport r = ad::gradcheck(loss_fn, {&w}, 1e-5, 1e-5);
  CHECK_FALSE(r.pass);
}

TEST_CASE("shape mismatches report both shapes") {
  Tape tape;
  Value a = tape.constant_fill(2, 3, 1.0);
  Value b = tape.constant_fill(3, 2, 1.0);
  try {
    (void)tape.add(a, b);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2x3)") != std::string::npos);
    CHECK(msg.find("(3x2)") != std::string::npos);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  std::mt19937_64 rng(31);
  Tensor a = random_tensor(rng, 3, 4, "layer.w");
  Tensor b = random_tensor(rng, 1, 4, "layer.b");
  a.data[0] = 1e-308;  // near-denormal values survive too
  const std::string dir = "ckpt_test_tmp";
  std::filesystem::create_directories(dir);
  ad::save_checkpoint(dir + "/c.json", dir + "/c.bin", {&a, &b}, {{"note", 1}});

  Tensor a2(3, 4);
  a2.name = "layer.w";
  Tensor b2(1, 4);
  b2.name = "layer.b";
  std::vector<Tensor*> out = {&a2, &b2};
  nlohmann::json extra = ad::load_checkpoint(dir + "/c.json", dir + "/c.bin", out);
  CHECK(std::memcmp(a.data.data(), a2.data.data(), a.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(b.data.data(), b2.data.data(), b.size() * sizeof(double)) == 0);
  CHECK(extra.at("note").get<int>() == 1);
  std::filesystem::remove_all(dir);
}
