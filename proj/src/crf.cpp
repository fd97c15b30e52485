#include "mpner/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mpner {

namespace {

template <typename T>
T log_sum_exp(const T* x, std::size_t n) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i]);
  if (!std::isfinite(mx)) return mx;
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) total += std::exp(x[i] - mx);
  return mx + std::log(total);
}

// Log-space forward and backward tables for one sequence; returns log Z.
template <typename T>
T forward_backward(const T* em, std::size_t n, std::size_t K, const T* trans, const T* start, const T* end,
                   std::vector<T>& alpha, std::vector<T>* beta) {
  alpha.assign(n * K, T(0));
  std::vector<T> scratch(K);
  for (std::size_t k = 0; k < K; ++k) alpha[k] = start[k] + em[k];
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t b = 0; b < K; ++b) {
      for (std::size_t a = 0; a < K; ++a) scratch[a] = alpha[(i - 1) * K + a] + trans[a * K + b];
      alpha[i * K + b] = em[i * K + b] + log_sum_exp(scratch.data(), K);
    }
  }
  for (std::size_t k = 0; k < K; ++k) scratch[k] = alpha[(n - 1) * K + k] + end[k];
  const T log_z = log_sum_exp(scratch.data(), K);
  if (beta) {
    beta->assign(n * K, T(0));
    for (std::size_t k = 0; k < K; ++k) (*beta)[(n - 1) * K + k] = end[k];
    for (std::size_t i = n - 1; i-- > 0;) {
      for (std::size_t a = 0; a < K; ++a) {
        for (std::size_t b = 0; b < K; ++b)
          scratch[b] = trans[a * K + b] + em[(i + 1) * K + b] + (*beta)[(i + 1) * K + b];
        (*beta)[i * K + a] = log_sum_exp(scratch.data(), K);
      }
    }
  }
  return log_z;
}

template <typename T>
T path_score(const T* em, std::size_t n, std::size_t K, const T* trans, const T* start, const T* end,
             const int* tags) {
  T s = start[tags[0]];
  for (std::size_t i = 0; i < n; ++i) s += em[i * K + tags[i]];
  for (std::size_t i = 0; i + 1 < n; ++i) s += trans[tags[i] * K + tags[i + 1]];
  return s + end[tags[n - 1]];
}

void check_tags(const TagSequence& tags, const TagLattice& lattice) {
  if (tags.size() != lattice.length)
    throw std::invalid_argument("tag sequence length " + std::to_string(tags.size()) +
                                " does not match lattice length " + std::to_string(lattice.length));
  for (int t : tags)
    if (t < 0 || static_cast<std::size_t>(t) >= lattice.num_tags) throw std::invalid_argument("tag out of range");
}

}  // namespace

TagLattice TagLattice::zeros(std::size_t length, std::size_t num_tags) {
  TagLattice l;
  l.length = length;
  l.num_tags = num_tags;
  l.emissions.assign(length * num_tags, 0.0);
  l.transitions.assign(num_tags * num_tags, 0.0);
  l.start.assign(num_tags, 0.0);
  l.end.assign(num_tags, 0.0);
  return l;
}

void TagLattice::validate() const {
  if (length < 1 || num_tags < 1) throw std::invalid_argument("lattice needs length >= 1 and tags >= 1");
  if (emissions.size() != length * num_tags || transitions.size() != num_tags * num_tags ||
      start.size() != num_tags || end.size() != num_tags)
    throw std::invalid_argument("lattice arrays inconsistent with its dimensions");
}

bool ConstraintMask::path_allowed(const TagSequence& tags) const {
  if (tags.empty()) return true;
  if (!allowed_start[tags.front()] || !allowed_end[tags.back()]) return false;
  for (std::size_t i = 0; i + 1 < tags.size(); ++i)
    if (!transition_allowed(tags[i], tags[i + 1])) return false;
  return true;
}

ConstraintMask bilou_constraints(std::size_t num_tags) {
  if (num_tags != kNumTags) throw std::invalid_argument("BILOU constraints are defined for 5 tags");
  ConstraintMask mask;
  mask.num_tags = num_tags;
  mask.allowed_transitions.assign(num_tags * num_tags, 0);
  const std::pair<int, int> allowed[] = {
      {kOutside, kOutside}, {kOutside, kBegin}, {kOutside, kUnit}, {kBegin, kInside}, {kBegin, kLast},
      {kInside, kInside},   {kInside, kLast},   {kLast, kOutside}, {kLast, kBegin},   {kLast, kUnit},
      {kUnit, kOutside},    {kUnit, kBegin},    {kUnit, kUnit}};
  for (auto [a, b] : allowed) mask.allowed_transitions[a * num_tags + b] = 1;
  mask.allowed_start = {1, 1, 0, 0, 1};
  mask.allowed_end = {1, 0, 0, 1, 1};
  return mask;
}

double score_sequence(const TagLattice& lattice, const TagSequence& tags) {
  lattice.validate();
  check_tags(tags, lattice);
  return path_score(lattice.emissions.data(), lattice.length, lattice.num_tags, lattice.transitions.data(),
                    lattice.start.data(), lattice.end.data(), tags.data());
}

double log_partition(const TagLattice& lattice) {
  lattice.validate();
  std::vector<double> alpha;
  return forward_backward(lattice.emissions.data(), lattice.length, lattice.num_tags, lattice.transitions.data(),
                          lattice.start.data(), lattice.end.data(), alpha, static_cast<std::vector<double>*>(nullptr));
}

double crf_nll(const TagLattice& lattice, const TagSequence& gold) {
  return log_partition(lattice) - score_sequence(lattice, gold);
}

template <typename T>
ViterbiResult viterbi_decode(const T* em, std::size_t n, std::size_t K, const T* trans, const T* start,
                             const T* end, const ConstraintMask* mask) {
  ViterbiResult result;
  if (n == 0) return result;
  if (mask && mask->num_tags != K) throw std::invalid_argument("constraint mask has wrong tag count");
  constexpr double kNeg = -std::numeric_limits<double>::infinity();
  std::vector<double> score(K), next(K);
  std::vector<int> back(n * K, 0);
  auto no_path = [](const std::vector<double>& s) {
    return std::none_of(s.begin(), s.end(), [](double x) { return x > kNeg; });
  };
  for (std::size_t k = 0; k < K; ++k)
    score[k] = (mask && !mask->allowed_start[k]) ? kNeg : static_cast<double>(start[k]) + em[k];
  if (no_path(score)) throw std::invalid_argument("no legal path");
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t b = 0; b < K; ++b) {
      double best = kNeg;
      int arg = 0;
      for (std::size_t a = 0; a < K; ++a) {
        if (score[a] == kNeg || (mask && !mask->transition_allowed(a, b))) continue;
        const double s = score[a] + static_cast<double>(trans[a * K + b]);
        if (s > best) {
          best = s;
          arg = static_cast<int>(a);
        }
      }
      next[b] = best == kNeg ? kNeg : best + static_cast<double>(em[i * K + b]);
      back[i * K + b] = arg;
    }
    std::swap(score, next);
    if (no_path(score)) throw std::invalid_argument("no legal path");
  }
  double best = kNeg;
  int last = -1;
  for (std::size_t k = 0; k < K; ++k) {
    if (score[k] == kNeg || (mask && !mask->allowed_end[k])) continue;
    const double s = score[k] + static_cast<double>(end[k]);
    if (s > best) {
      best = s;
      last = static_cast<int>(k);
    }
  }
  if (last < 0) throw std::invalid_argument("no legal path");
  result.tags.assign(n, 0);
  result.tags[n - 1] = last;
  for (std::size_t i = n - 1; i > 0; --i) result.tags[i - 1] = back[i * K + result.tags[i]];
  result.score = best;
  return result;
}

ViterbiResult viterbi(const TagLattice& lattice, const ConstraintMask* mask) {
  lattice.validate();
  return viterbi_decode(lattice.emissions.data(), lattice.length, lattice.num_tags, lattice.transitions.data(),
                        lattice.start.data(), lattice.end.data(), mask);
}

template <typename T>
ad::Var crf_nll_node(ad::Graph<T>& graph, ad::Var emissions, ad::Var transitions, ad::Var start, ad::Var end,
                     std::span<const int> gold, std::span<const std::size_t> lengths) {
  const auto& em = graph.value(emissions);
  const auto& tr = graph.value(transitions);
  const auto& st = graph.value(start);
  const auto& en = graph.value(end);
  if (em.rank() != 3) throw std::invalid_argument("crf emissions must be [batch, length, tags], got " + ad::shape_str(em.shape));
  const std::size_t B = em.shape[0], S = em.shape[1], K = em.shape[2];
  if (tr.shape != ad::Shape{K, K} || st.shape != ad::Shape{K} || en.shape != ad::Shape{K})
    throw std::invalid_argument("crf parameter shapes do not match " + std::to_string(K) + " tags");
  if (gold.size() != B * S || lengths.size() != B)
    throw std::invalid_argument("crf gold/lengths do not match emissions " + ad::shape_str(em.shape));

  struct Sequence {
    std::size_t batch;
    std::size_t length;
    std::vector<T> alpha, beta;
    T log_z;
  };
  std::vector<Sequence> seqs;
  T total = T(0);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t n = lengths[b];
    if (n == 0) continue;
    if (n > S) throw std::invalid_argument("sequence length exceeds padded width");
    const int* tags = gold.data() + b * S;
    for (std::size_t i = 0; i < n; ++i)
      if (tags[i] < 0 || static_cast<std::size_t>(tags[i]) >= K) throw std::invalid_argument("gold tag out of range");
    Sequence s{b, n, {}, {}, T(0)};
    const T* e = em.data.data() + b * S * K;
    s.log_z = forward_backward(e, n, K, tr.data.data(), st.data.data(), en.data.data(), s.alpha, &s.beta);
    total += s.log_z - path_score(e, n, K, tr.data.data(), st.data.data(), en.data.data(), tags);
    seqs.push_back(std::move(s));
  }
  const T count = static_cast<T>(std::max<std::size_t>(seqs.size(), 1));
  std::vector<int> gold_copy(gold.begin(), gold.end());

  return graph.custom(
      {emissions, transitions, start, end}, ad::Tensor<T>::scalar(total / count),
      [&graph, emissions, transitions, S, K, count, seqs = std::move(seqs), gold_copy = std::move(gold_copy)](
          const ad::Tensor<T>& g, std::span<ad::Tensor<T>*> grads) {
        const T scale = g[0] / count;
        const auto& em = graph.value(emissions);
        const auto& tr = graph.value(transitions);
        for (const auto& s : seqs) {
          const T* e = em.data.data() + s.batch * S * K;
          const int* tags = gold_copy.data() + s.batch * S;
          const std::size_t n = s.length;
          auto node_marginal = [&](std::size_t i, std::size_t k) {
            return std::exp(s.alpha[i * K + k] + s.beta[i * K + k] - s.log_z);
          };
          if (grads[0]) {
            T* de = grads[0]->data.data() + s.batch * S * K;
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t k = 0; k < K; ++k) de[i * K + k] += scale * node_marginal(i, k);
              de[i * K + tags[i]] -= scale;
            }
          }
          if (grads[1]) {
            T* dt = grads[1]->data.data();
            for (std::size_t i = 0; i + 1 < n; ++i) {
              for (std::size_t a = 0; a < K; ++a)
                for (std::size_t b = 0; b < K; ++b)
                  dt[a * K + b] += scale * std::exp(s.alpha[i * K + a] + tr[a * K + b] + e[(i + 1) * K + b] +
                                                    s.beta[(i + 1) * K + b] - s.log_z);
              dt[tags[i] * K + tags[i + 1]] -= scale;
            }
          }
          if (grads[2]) {
            for (std::size_t k = 0; k < K; ++k) (*grads[2])[k] += scale * node_marginal(0, k);
            (*grads[2])[tags[0]] -= scale;
          }
          if (grads[3]) {
            for (std::size_t k = 0; k < K; ++k) (*grads[3])[k] += scale * node_marginal(n - 1, k);
            (*grads[3])[tags[n - 1]] -= scale;
          }
        }
      });
}

template ViterbiResult viterbi_decode<float>(const float*, std::size_t, std::size_t, const float*, const float*,
                                             const float*, const ConstraintMask*);
template ViterbiResult viterbi_decode<double>(const double*, std::size_t, std::size_t, const double*,
                                              const double*, const double*, const ConstraintMask*);
template ad::Var crf_nll_node<float>(ad::Graph<float>&, ad::Var, ad::Var, ad::Var, ad::Var, std::span<const int>,
                                     std::span<const std::size_t>);
template ad::Var crf_nll_node<double>(ad::Graph<double>&, ad::Var, ad::Var, ad::Var, ad::Var,
                                      std::span<const int>, std::span<const std::size_t>);

}  // namespace mpner
