#include <cmath>

#include "unem/oracle.hpp"

namespace unem::oracle {

std::vector<Rows> reference_em(const EmProblem& p, int iterations) {
  const std::size_t n_rows = p.x.size();
  const std::size_t dim = n_rows ? p.x[0].size() : 0;
  const auto K = static_cast<std::size_t>(p.classes);

  Rows resp(n_rows, std::vector<double>(K, 0.0));
  for (std::size_t n = 0; n < n_rows; ++n)
    if (p.label[n] >= 0) resp[n][static_cast<std::size_t>(p.label[n])] = 1.0;

  Rows mean(K, std::vector<double>(dim, 0.0));
  std::vector<double> count(K, 0.0);
  for (std::size_t n = 0; n < n_rows; ++n) {
    if (p.label[n] < 0) continue;
    const auto k = static_cast<std::size_t>(p.label[n]);
    count[k] += 1.0;
    for (std::size_t i = 0; i < dim; ++i) mean[k][i] += p.x[n][i];
  }
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < dim; ++i) mean[k][i] /= count[k];
  std::vector<double> weight(K, 1.0 / static_cast<double>(K));

  std::vector<Rows> history;
  for (int it = 0; it < iterations; ++it) {
    // E-step on query rows
    Rows post;
    for (std::size_t n = 0; n < n_rows; ++n) {
      if (p.label[n] >= 0) continue;
      std::vector<double> logp(K);
      double top = -INFINITY;
      for (std::size_t k = 0; k < K; ++k) {
        double dist = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dist += (p.x[n][i] - mean[k][i]) * (p.x[n][i] - mean[k][i]);
        logp[k] = std::log(weight[k]) - 0.5 * dist;
        if (logp[k] > top) top = logp[k];
      }
      double total = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        logp[k] = std::exp(logp[k] - top);
        total += logp[k];
      }
      for (std::size_t k = 0; k < K; ++k) resp[n][k] = logp[k] / total;
      post.push_back(resp[n]);
    }
    history.push_back(post);

    // M-step
    for (std::size_t k = 0; k < K; ++k) {
      double mass = 0.0;
      std::vector<double> acc(dim, 0.0);
      for (std::size_t n = 0; n < n_rows; ++n) {
        mass += resp[n][k];
        for (std::size_t i = 0; i < dim; ++i) acc[i] += resp[n][k] * p.x[n][i];
      }
      if (mass > 0.0)
        for (std::size_t i = 0; i < dim; ++i) mean[k][i] = acc[i] / mass;
      double query_mass = 0.0;
      std::size_t queries = 0;
      for (std::size_t n = 0; n < n_rows; ++n) {
        if (p.label[n] >= 0) continue;
        query_mass += resp[n][k];
        ++queries;
      }
      weight[k] = query_mass / static_cast<double>(queries);
    }
  }
  return history;
}

}  // namespace unem::oracle
