#include "spose/choice.hpp"

#include <algorithm>
#include <cmath>

#include "spose/numeric.hpp"
#include "spose/rng.hpp"

namespace spose {

namespace detail {

// Softmax of the three pairwise dot products, max-shifted for stability.
ChoiceDistribution softmax_from_dots(double s_ab, double s_ac, double s_bc) {
    const double m = std::max({s_ab, s_ac, s_bc});
    const double e_ab = std::exp(s_ab - m);
    const double e_ac = std::exp(s_ac - m);
    const double e_bc = std::exp(s_bc - m);
    const double z = e_ab + e_ac + e_bc;
    ChoiceDistribution d;
    d.p[0] = e_bc / z;  // a odd: b and c are the similar pair
    d.p[1] = e_ac / z;
    d.p[2] = e_ab / z;
    return d;
}

}  // namespace detail

ChoiceDistribution choice_probabilities(const Embedding& emb, const Triplet& t) {
    if (t.c >= emb.objects()) {
        throw DomainError("triplet references object " + std::to_string(t.c) +
                          " outside the embedding");
    }
    const auto xa = emb.row(t.a);
    const auto xb = emb.row(t.b);
    const auto xc = emb.row(t.c);
    return detail::softmax_from_dots(dot(xa, xb), dot(xa, xc), dot(xb, xc));
}

int predict_choice(const Embedding& emb, const Triplet& t) {
    const ChoiceDistribution d = choice_probabilities(emb, t);
    int best = 0;
    for (int s = 1; s < 3; ++s) {
        if (d.p[s] > d.p[best]) best = s;
    }
    return best;
}

JudgmentSet simulate_judgments(const Embedding& emb, const std::vector<Triplet>& triplets,
                               std::uint64_t seed, bool deterministic) {
    JudgmentSet set;
    set.provenance = "synthetic-oracle";
    set.judgments.reserve(triplets.size());
    Rng rng(seed);
    for (const Triplet& t : triplets) {
        int choice;
        if (deterministic) {
            choice = predict_choice(emb, t);
        } else {
            const ChoiceDistribution d = choice_probabilities(emb, t);
            const double u = rng.unit();
            choice = u < d.p[0] ? 0 : (u < d.p[0] + d.p[1] ? 1 : 2);
        }
        set.judgments.push_back(Judgment{t, choice});
    }
    return set;
}

NoiseCeiling noise_ceiling(const std::vector<std::vector<int>>& repeats,
                           std::uint64_t bootstrap_seed) {
    if (repeats.empty()) throw DomainError("noise_ceiling: no triplets given");
    std::vector<double> consistency;
    consistency.reserve(repeats.size());
    for (const std::vector<int>& choices : repeats) {
        if (choices.size() < 2) {
            throw DomainError("noise_ceiling: every triplet needs at least 2 repeats");
        }
        int counts[3] = {0, 0, 0};
        for (int c : choices) {
            if (c < 0 || c > 2) throw DomainError("noise_ceiling: choice outside {0,1,2}");
            ++counts[c];
        }
        const int modal = std::max({counts[0], counts[1], counts[2]});
        consistency.push_back(static_cast<double>(modal) / static_cast<double>(choices.size()));
    }

    NoiseCeiling out;
    out.triplets = consistency.size();
    out.ceiling = mean(consistency);

    const std::size_t n = consistency.size();
    const int draws = 1000;
    std::vector<double> boot(draws);
    Rng rng(bootstrap_seed);
    std::vector<double> resample(n);
    for (int b = 0; b < draws; ++b) {
        for (std::size_t i = 0; i < n; ++i) resample[i] = consistency[rng.below(n)];
        boot[b] = mean(resample);
    }
    std::sort(boot.begin(), boot.end());
    out.lo95 = boot[static_cast<std::size_t>(0.025 * (draws - 1))];
    out.hi95 = boot[static_cast<std::size_t>(0.975 * (draws - 1))];
    return out;
}

}  // namespace spose
