#include "unem/task_engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "unem/error.hpp"

namespace unem {

void ProtocolConfig::validate() const {
  if (k_total < 0) throw ConfigError("protocol: k_total must be >= 0");
  if (k_eff < 1) throw ConfigError("protocol: k_eff must be >= 1");
  if (k_total > 0 && k_eff > k_total) throw ConfigError("protocol: k_eff exceeds k_total");
  if (shots < 1) throw ConfigError("protocol: shots must be >= 1");
  if (query_size < 1) throw ConfigError("protocol: query_size must be >= 1");
  if (imbalance == Imbalance::uniform && query_size < k_eff)
    throw ConfigError("protocol: query_size < k_eff in uniform mode");
  if (imbalance == Imbalance::dirichlet && !(dirichlet_alpha > 0.0))
    throw ConfigError("protocol: dirichlet alpha must be > 0");
}

namespace {

std::vector<std::size_t> random_subset(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<int> query_counts(const ProtocolConfig& cfg, Rng& rng) {
  const auto k = static_cast<std::size_t>(cfg.k_eff);
  std::vector<int> counts(k, 0);
  if (cfg.imbalance == Imbalance::uniform) {
    for (std::size_t c = 0; c < k; ++c)
      counts[c] = cfg.query_size / cfg.k_eff + (static_cast<int>(c) < cfg.query_size % cfg.k_eff ? 1 : 0);
    return counts;
  }
  std::gamma_distribution<double> gamma(cfg.dirichlet_alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (double& v : p) {
    v = gamma(rng);
    total += v;
  }
  if (!(total > 0.0)) {
    // every gamma draw underflowed; fall back to one class
    p.assign(k, 0.0);
    p[0] = 1.0;
    total = 1.0;
  }
  // multinomial by sequential binomials
  int remaining = cfg.query_size;
  double mass_left = 1.0;
  for (std::size_t c = 0; c + 1 < k; ++c) {
    const double q = p[c] / total;
    const double prob = mass_left > 0.0 ? std::clamp(q / mass_left, 0.0, 1.0) : 0.0;
    std::binomial_distribution<int> binom(remaining, prob);
    counts[c] = binom(rng);
    remaining -= counts[c];
    mass_left -= q;
  }
  counts[k - 1] = remaining;
  return counts;
}

}  // namespace

Episode sample_task(const FeatureBundle& bundle, const std::string& split, const ProtocolConfig& cfg,
                    FeatureMode mode, Rng& rng) {
  cfg.validate();
  const SplitRange* range = bundle.find_split(split);
  if (range == nullptr) throw ConfigError("bundle has no split '" + split + "'");

  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = range->begin; i < range->end; ++i) by_class[bundle.labels[i]].push_back(i);
  if (by_class.empty()) throw ConfigError("split '" + split + "' is empty");

  std::vector<std::uint32_t> split_classes;
  for (const auto& [cls, _] : by_class) split_classes.push_back(cls);
  std::size_t K = split_classes.size();
  if (cfg.k_total > 0) {
    if (static_cast<std::size_t>(cfg.k_total) > K)
      throw ConfigError("split '" + split + "' has fewer than k_total classes");
    K = static_cast<std::size_t>(cfg.k_total);
  }
  if (static_cast<std::size_t>(cfg.k_eff) > K) throw ConfigError("k_eff exceeds the number of task classes");

  Episode ep;
  for (std::size_t c : random_subset(split_classes.size(), K, rng)) ep.classes.push_back(split_classes[c]);
  const std::vector<std::size_t> effective = random_subset(K, static_cast<std::size_t>(cfg.k_eff), rng);
  const std::vector<int> counts = query_counts(cfg, rng);

  std::vector<std::size_t> support;
  std::vector<int> support_labels;
  std::vector<std::pair<std::size_t, int>> query;
  for (std::size_t c = 0; c < K; ++c) {
    std::vector<std::size_t> pool = by_class[ep.classes[c]];
    std::shuffle(pool.begin(), pool.end(), rng);
    int wanted = 0;
    const auto eff = std::find(effective.begin(), effective.end(), c);
    if (eff != effective.end()) wanted = counts[static_cast<std::size_t>(eff - effective.begin())];
    if (pool.size() < static_cast<std::size_t>(cfg.shots + wanted))
      throw ConfigError("class " + std::to_string(ep.classes[c]) + " has too few samples for the task");
    for (int s = 0; s < cfg.shots; ++s) {
      support.push_back(pool[static_cast<std::size_t>(s)]);
      support_labels.push_back(static_cast<int>(c));
    }
    for (int q = 0; q < wanted; ++q) query.emplace_back(pool[static_cast<std::size_t>(cfg.shots + q)], static_cast<int>(c));
  }
  std::shuffle(query.begin(), query.end(), rng);

  for (std::size_t s : support) ep.samples.push_back(s);
  for (const auto& [s, _] : query) ep.samples.push_back(s);

  const bool select_columns = mode == FeatureMode::clip_probability;
  if (select_columns && bundle.dim != bundle.n_classes)
    throw ConfigError("clip_probability features need one column per class");
  const std::size_t d = select_columns ? K : bundle.dim;
  const std::size_t N = ep.samples.size();
  ep.task.features = Matrix(N, d);
  for (std::size_t r = 0; r < N; ++r) {
    const auto src = bundle.row(ep.samples[r]);
    auto dst = ep.task.features.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      double v = select_columns ? src[ep.classes[j]] : src[j];
      if (select_columns && bundle.kind == FeatureKind::simplex) v = std::log(std::max(v, kSimplexFloor));
      dst[j] = v;
    }
  }
  for (std::size_t j = 0; j < support.size(); ++j) ep.task.support_idx.push_back(j);
  ep.task.support_labels = std::move(support_labels);
  for (std::size_t j = 0; j < query.size(); ++j) {
    ep.task.query_idx.push_back(support.size() + j);
    ep.query_labels.push_back(query[j].second);
  }
  ep.task.k_total = static_cast<int>(K);
  return ep;
}

std::vector<Episode> sample_tasks(const FeatureBundle& bundle, const std::string& split, const ProtocolConfig& cfg,
                                  FeatureMode mode, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_task(bundle, split, cfg, mode, rng));
  return out;
}

FeatureBundle make_synthetic_bundle(const SyntheticWorld& world, std::size_t n_per_class, const SplitPlan& plan) {
  const std::size_t C = plan.base + plan.val + plan.test;
  if (C == 0 || n_per_class == 0) throw ConfigError("synthetic bundle needs classes and samples");
  if (world.n_classes != C) throw ConfigError("split plan does not match the world's class count");

  Rng rng(world.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  FeatureBundle b;
  b.n_classes = C;
  b.n_samples = C * n_per_class;
  b.kind = world.kind == WorldKind::gmm ? FeatureKind::raw : FeatureKind::simplex;
  b.dim = world.kind == WorldKind::gmm ? world.dim : C;
  for (std::size_t c = 0; c < C; ++c) b.class_names.push_back("class_" + std::to_string(c));
  b.features.reserve(b.n_samples * b.dim);
  b.labels.reserve(b.n_samples);

  // class parameters first, so the sample stream does not shift them
  std::vector<std::vector<double>> params(C, std::vector<double>(b.dim));
  if (world.kind == WorldKind::gmm) {
    const double scale = world.separation / std::sqrt(static_cast<double>(b.dim));
    for (auto& mean : params)
      for (double& v : mean) v = scale * normal(rng);
  } else {
    std::uniform_real_distribution<double> own(world.concentration_lo, world.concentration_hi);
    for (std::size_t c = 0; c < C; ++c) {
      std::fill(params[c].begin(), params[c].end(), world.background);
      params[c][c] = own(rng);
    }
  }

  std::vector<double> sample(b.dim);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t s = 0; s < n_per_class; ++s) {
      if (world.kind == WorldKind::gmm) {
        for (std::size_t j = 0; j < b.dim; ++j) sample[j] = params[c][j] + world.noise * normal(rng);
      } else {
        double total = 0.0;
        for (std::size_t j = 0; j < b.dim; ++j) {
          std::gamma_distribution<double> gamma(params[c][j], 1.0);
          sample[j] = gamma(rng);
          total += sample[j];
        }
        for (double& v : sample) v /= total;
      }
      for (double v : sample) b.features.push_back(static_cast<float>(v));
      b.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  b.splits = {{0, plan.base * n_per_class, "base"},
              {plan.base * n_per_class, (plan.base + plan.val) * n_per_class, "val"},
              {(plan.base + plan.val) * n_per_class, C * n_per_class, "test"}};
  return b;
}

double task_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || truth.empty()) throw ConfigError("score: prediction/truth size mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

EvalReport score(const std::vector<std::vector<int>>& predictions, const std::vector<std::vector<int>>& truth) {
  if (predictions.size() != truth.size()) throw ConfigError("score: task count mismatch");
  EvalReport r;
  for (std::size_t t = 0; t < truth.size(); ++t) r.task_accuracy.push_back(task_accuracy(predictions[t], truth[t]));
  const auto n = static_cast<double>(r.task_accuracy.size());
  if (r.task_accuracy.empty()) return r;
  r.mean = std::accumulate(r.task_accuracy.begin(), r.task_accuracy.end(), 0.0) / n;
  if (r.task_accuracy.size() > 1) {
    double ss = 0.0;
    for (double a : r.task_accuracy) ss += (a - r.mean) * (a - r.mean);
    r.stddev = std::sqrt(ss / (n - 1.0));
    r.stderr_mean = r.stddev / std::sqrt(n);
  }
  return r;
}

}  // namespace unem
