#pragma once

#include <array>
#include <cstdint>

#include "spose/catalog.hpp"
#include "spose/embedding.hpp"

namespace spose {

// Odd-one-out probabilities aligned to the canonical slots (a, b, c).
// An object is the odd one out in proportion to exp(similarity of the
// OTHER two), so p[2] (c odd) = exp(x_a . x_b) / Z and cyclically.
struct ChoiceDistribution {
    std::array<double, 3> p{};

    double operator[](std::size_t slot) const { return p[slot]; }
};

ChoiceDistribution choice_probabilities(const Embedding& emb, const Triplet& t);

// Argmax slot of choice_probabilities; ties go to the lowest slot index.
int predict_choice(const Embedding& emb, const Triplet& t);

// One stochastic choice per triplet, drawn from its choice distribution.
// With deterministic=true, every choice is predict_choice instead.
JudgmentSet simulate_judgments(const Embedding& emb, const std::vector<Triplet>& triplets,
                               std::uint64_t seed, bool deterministic = false);

struct NoiseCeiling {
    double ceiling = 0.0;   // mean over triplets of (modal choice count / repeats)
    double lo95 = 0.0;      // bootstrap percentile interval over triplets
    double hi95 = 0.0;
    std::size_t triplets = 0;
};

// Repeat-consistency ceiling: every triplet needs >= 2 repeated choices.
// The bootstrap resamples triplets (1000 draws, seeded).
NoiseCeiling noise_ceiling(const std::vector<std::vector<int>>& repeats,
                           std::uint64_t bootstrap_seed = 17);

}  // namespace spose
