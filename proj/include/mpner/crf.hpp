#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mpner/autodiff.hpp"
#include "mpner/text.hpp"

namespace mpner {

// Row-major scores for a single sequence. transitions[a * K + b] scores a -> b.
struct TagLattice {
  std::size_t length = 0;
  std::size_t num_tags = 0;
  std::vector<double> emissions;
  std::vector<double> transitions;
  std::vector<double> start;
  std::vector<double> end;

  static TagLattice zeros(std::size_t length, std::size_t num_tags);
  double emission(std::size_t i, std::size_t k) const { return emissions[i * num_tags + k]; }
  double& emission(std::size_t i, std::size_t k) { return emissions[i * num_tags + k]; }
  double transition(std::size_t a, std::size_t b) const { return transitions[a * num_tags + b]; }
  double& transition(std::size_t a, std::size_t b) { return transitions[a * num_tags + b]; }
  void validate() const;
};

struct ConstraintMask {
  std::size_t num_tags = 0;
  std::vector<std::uint8_t> allowed_transitions;  // K x K
  std::vector<std::uint8_t> allowed_start;
  std::vector<std::uint8_t> allowed_end;

  bool transition_allowed(std::size_t a, std::size_t b) const {
    return allowed_transitions[a * num_tags + b] != 0;
  }
  bool path_allowed(const TagSequence& tags) const;
};

// Legal BILOU moves for the single-type tag set (O, B, I, L, U).
ConstraintMask bilou_constraints(std::size_t num_tags = kNumTags);

double score_sequence(const TagLattice& lattice, const TagSequence& tags);
double log_partition(const TagLattice& lattice);
double crf_nll(const TagLattice& lattice, const TagSequence& gold);

struct ViterbiResult {
  TagSequence tags;
  double score = 0.0;
};

// Ties go to the lowest tag id. With a mask only allowed paths are scored.
ViterbiResult viterbi(const TagLattice& lattice, const ConstraintMask* mask = nullptr);

// Same decoder over raw row-major scores of any precision.
template <typename T>
ViterbiResult viterbi_decode(const T* emissions, std::size_t length, std::size_t num_tags,
                             const T* transitions, const T* start, const T* end,
                             const ConstraintMask* mask);

/// Mean negative log-likelihood over a padded batch, as a graph node.
///
/// emissions: [B, S, K]; transitions: [K, K]; start, end: [K].
/// gold holds B*S tag ids; positions at or beyond lengths[b] are ignored, so
/// padding never contributes to the value or the gradients.
template <typename T>
ad::Var crf_nll_node(ad::Graph<T>& graph, ad::Var emissions, ad::Var transitions, ad::Var start,
                     ad::Var end, std::span<const int> gold, std::span<const std::size_t> lengths);

}  // namespace mpner
