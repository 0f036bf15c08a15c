#include "gradsuite.hpp"

#include <cmath>
#include <cstdio>

#include "backbone.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "train.hpp"

namespace weakmap {

namespace {

constexpr double kEps = 1e-5;
constexpr double kKinkMargin = 1e-3;
constexpr int kMaxRedraws = 25;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t.v(i) = rng.uniform(lo, hi);
  return t;
}

// Scalarizes an op output with fixed random weights; a plain sum would be
// blind to permutations and constant-output degeneracies.
Tensor weighted_sum(Tape& tape, const Tensor& y, const Tensor& weights) {
  return sum(tape, elementwise_mul(tape, y, weights));
}

// One operator entry: per seed, redraw until the base point is clear of
// kinks/ties, then accumulate the worst coordinate error.
struct SuiteBuilder {
  std::vector<GradCheckEntry> entries;
  uint64_t base_seed;
  int seeds_per_op;

  using CheckFn = std::function<double(uint64_t seed, double* margin)>;

  void run(const std::string& name, const CheckFn& fn) {
    GradCheckEntry entry;
    entry.op = name;
    uint64_t salt = 0;
    for (int s = 0; s < seeds_per_op; ++s) {
      double err = 0.0;
      for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
        double margin = std::numeric_limits<double>::infinity();
        err = fn(mix_seed(base_seed, 1000003ULL * static_cast<uint64_t>(s) + salt), &margin);
        if (margin > kKinkMargin) break;
        ++salt;
      }
      entry.max_rel_err = std::max(entry.max_rel_err, err);
      ++entry.seeds;
    }
    entries.push_back(std::move(entry));
  }
};

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite(uint64_t base_seed, int seeds_per_op) {
  SuiteBuilder suite{{}, base_seed, seeds_per_op};

  suite.run("conv2d/input", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor x = random_tensor({5, 5, 3}, rng);
    Tensor k = random_tensor({3, 3, 3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor w = random_tensor({3, 3, 4}, rng);  // stride 2, pad 1: 5 -> 3
    return grad_check(
        [&](Tape& t, const Tensor& in) { return weighted_sum(t, conv2d(t, in, k, &b, 2, 1), w); },
        x, kEps, margin);
  });
  suite.run("conv2d/kernels", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor x = random_tensor({5, 5, 3}, rng);
    Tensor k = random_tensor({3, 3, 3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor w = random_tensor({5, 5, 4}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& kk) { return weighted_sum(t, conv2d(t, x, kk, &b, 1, 1), w); },
        k, kEps, margin);
  });
  suite.run("conv2d/bias", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor x = random_tensor({4, 4, 2}, rng);
    Tensor k = random_tensor({3, 3, 2, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor w = random_tensor({2, 2, 3}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& bb) { return weighted_sum(t, conv2d(t, x, k, &bb, 1, 0), w); },
        b, kEps, margin);
  });
  suite.run("avg_pool2d", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor x = random_tensor({6, 6, 3}, rng);
    Tensor w = random_tensor({3, 3, 3}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& in) { return weighted_sum(t, avg_pool2d(t, in, 2, 2), w); }, x,
        kEps, margin);
  });
  suite.run("global_avg_pool", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor x = random_tensor({5, 4, 3}, rng);
    Tensor w = random_tensor({3}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& in) { return weighted_sum(t, global_avg_pool(t, in), w); }, x,
        kEps, margin);
  });
  suite.run("dense/input", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor x = random_tensor({6}, rng);
    Tensor wgt = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor w = random_tensor({4}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& in) { return weighted_sum(t, dense(t, in, wgt, &b), w); }, x,
        kEps, margin);
  });
  suite.run("dense/weight", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor x = random_tensor({6}, rng);
    Tensor wgt = random_tensor({4, 6}, rng);
    Tensor w = random_tensor({4}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& ww) { return weighted_sum(t, dense(t, x, ww, nullptr), w); },
        wgt, kEps, margin);
  });
  suite.run("relu", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor x = random_tensor({3, 3, 2}, rng);
    Tensor w = random_tensor({3, 3, 2}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& in) { return weighted_sum(t, relu(t, in), w); }, x, kEps,
        margin);
  });
  suite.run("sigmoid", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor x = random_tensor({3, 3, 2}, rng, -3.0, 3.0);
    Tensor w = random_tensor({3, 3, 2}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& in) { return weighted_sum(t, sigmoid(t, in), w); }, x, kEps,
        margin);
  });
  suite.run("batchnorm/train", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor x = random_tensor({4, 4, 3}, rng);
    Tensor gamma = random_tensor({3}, rng, 0.5, 1.5);
    Tensor beta = random_tensor({3}, rng);
    Tensor w = random_tensor({4, 4, 3}, rng);
    double e1 = grad_check(
        [&](Tape& t, const Tensor& in) {
          return weighted_sum(t, batchnorm(t, in, gamma, beta, true, nullptr), w);
        },
        x, kEps, margin);
    double m2 = std::numeric_limits<double>::infinity();
    double e2 = grad_check(
        [&](Tape& t, const Tensor& g) {
          return weighted_sum(t, batchnorm(t, x, g, beta, true, nullptr), w);
        },
        gamma, kEps, &m2);
    *margin = std::min(*margin, m2);
    return std::max(e1, e2);
  });
  suite.run("se_block", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    SEParams p;
    p.w1 = random_tensor({3, 6}, rng);
    p.w2 = random_tensor({6, 3}, rng);
    Tensor u = random_tensor({3, 3, 6}, rng);
    Tensor w = random_tensor({3, 3, 6}, rng);
    double e1 = grad_check(
        [&](Tape& t, const Tensor& in) { return weighted_sum(t, se_block(t, in, p), w); }, u,
        kEps, margin);
    double m2 = std::numeric_limits<double>::infinity();
    double e2 = grad_check(
        [&](Tape& t, const Tensor& w1) {
          SEParams q{w1, p.w2, p.reduction};
          return weighted_sum(t, se_block(t, u, q), w);
        },
        p.w1, kEps, &m2);
    *margin = std::min(*margin, m2);
    return std::max(e1, e2);
  });
  suite.run("multi_map_transfer", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    HeadConfig cfg;
    cfg.maps_per_class = 3;
    cfg.classes = 2;
    Tensor f = random_tensor({3, 3, 5}, rng);
    Tensor wgt = random_tensor({1, 1, 5, 6}, rng);
    Tensor b = random_tensor({6}, rng);
    Tensor w = random_tensor({3, 3, 6}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& ww) {
          return weighted_sum(t, multi_map_transfer(t, f, ww, b, cfg), w);
        },
        wgt, kEps, margin);
  });
  suite.run("class_wise_avg", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor maps = random_tensor({3, 3, 6}, rng);
    Tensor w = random_tensor({3, 3, 2}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& in) { return weighted_sum(t, class_wise_avg(t, in, 3), w); },
        maps, kEps, margin);
  });
  suite.run("max_min_pool", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    HeadConfig cfg;
    cfg.classes = 2;
    cfg.k_plus = 2;
    cfg.k_minus = 2;
    cfg.alpha = 0.7;
    Tensor zbar = random_tensor({3, 3, 2}, rng);
    Tensor w = random_tensor({2}, rng);
    return grad_check(
        [&](Tape& t, const Tensor& in) { return weighted_sum(t, max_min_pool(t, in, cfg), w); },
        zbar, kEps, margin);
  });
  suite.run("sigmoid+bce", [](uint64_t seed, double* margin) {
    Rng rng(seed);
    Tensor scores = random_tensor({5}, rng, -2.5, 2.5);
    std::vector<int> labels(5);
    for (auto& l : labels) l = rng.bernoulli(0.5);
    return grad_check(
        [&](Tape& t, const Tensor& in) { return bce_loss(t, sigmoid(t, in), labels); }, scores,
        kEps, margin);
  });

  // full composite on a 16x16 image, checked against the input and a
  // representative parameter tensor from every depth of the network
  BackboneConfig bcfg;
  bcfg.stem_channels = 6;
  bcfg.num_blocks = 3;
  bcfg.layers_per_block = 2;
  bcfg.growth = 4;
  bcfg.se_reduction = 4;
  HeadConfig hcfg;
  hcfg.classes = 2;
  hcfg.maps_per_class = 2;
  hcfg.k_plus = 1;
  hcfg.k_minus = 1;
  hcfg.alpha = 0.7;

  auto full_model_check = [bcfg, hcfg](uint64_t seed, double* margin,
                                       const std::function<Tensor*(ModelParams&)>& pick) {
    Rng rng(seed);
    ModelParams params = init_params(bcfg, hcfg, rng.next_u64());
    Tensor img = random_tensor({16, 16, 1}, rng, 0.0, 1.0);
    std::vector<int> labels(static_cast<size_t>(hcfg.classes));
    for (auto& l : labels) l = rng.bernoulli(0.5);
    auto loss_of = [&](Tape& t, const Tensor& image) {
      ModelParams local = params;  // handles share storage; pick() swaps one
      ClassScores out = model_forward(t, image, local, bcfg, hcfg, Mode::kTrain);
      return bce_loss(t, out.probs, labels);
    };
    if (!pick) return grad_check(loss_of, img, kEps, margin);
    Tensor* target = pick(params);
    Tensor original = *target;
    return grad_check(
        [&](Tape& t, const Tensor& substituted) {
          *target = substituted;
          ClassScores out = model_forward(t, img, params, bcfg, hcfg, Mode::kTrain);
          *target = original;
          return bce_loss(t, out.probs, labels);
        },
        original, kEps, margin);
  };

  suite.run("full_model/input", [&](uint64_t seed, double* margin) {
    return full_model_check(seed, margin, nullptr);
  });
  suite.run("full_model/stem_w", [&](uint64_t seed, double* margin) {
    return full_model_check(seed, margin, [](ModelParams& p) { return &p.stem_w; });
  });
  suite.run("full_model/se_w1", [&](uint64_t seed, double* margin) {
    return full_model_check(seed, margin,
                            [](ModelParams& p) { return &p.transitions[0].se.w1; });
  });
  suite.run("full_model/bn_gamma", [&](uint64_t seed, double* margin) {
    return full_model_check(seed, margin,
                            [](ModelParams& p) { return &p.blocks[1][0].bn_gamma; });
  });
  suite.run("full_model/head_w", [&](uint64_t seed, double* margin) {
    return full_model_check(seed, margin, [](ModelParams& p) { return &p.head_w; });
  });

  return suite.entries;
}

std::string format_gradcheck(const std::vector<GradCheckEntry>& entries) {
  std::string out = "operator                  max_rel_err   verdict\n";
  char buf[128];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%-25s %11.3e   %s\n", e.op.c_str(), e.max_rel_err,
                  e.max_rel_err < 1e-4 ? "PASS" : "FAIL");
    out += buf;
  }
  out += gradcheck_all_pass(entries) ? "all operators PASS (threshold 1e-4, eps 1e-5)\n"
                                     : "FAILURES present (threshold 1e-4, eps 1e-5)\n";
  return out;
}

bool gradcheck_all_pass(const std::vector<GradCheckEntry>& entries) {
  for (const auto& e : entries)
    if (!(e.max_rel_err < 1e-4)) return false;
  return !entries.empty();
}

}  // namespace weakmap
