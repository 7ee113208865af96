#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bench/core.hpp"
#include "bench/models.hpp"

namespace bench {

enum class ParamKind { integer, real, categorical };

struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::real;
    double low = 0.0;   // numeric kinds
    double high = 0.0;
    bool log_scale = false;
    std::vector<double> choices;  // categorical kind
};

struct SearchSpace {
    std::string model;
    std::vector<ParamSpec> params;

    const ParamSpec* find(const std::string& name) const;
};

// The published tuning space for "resnext", "resnet", or "ft".
SearchSpace space_for(const std::string& tag);

enum class TrialStatus { complete, failed };

struct Trial {
    ConfigMap config;
    double objective = 0.0;  // mean inner-CV AUC; meaningful only when complete
    TrialStatus status = TrialStatus::complete;
    double duration_s = 0.0;
};

struct Budget {
    int max_trials = 100;
    double max_wall_clock = 23.0 * 3600.0;  // seconds
};

// Sequential model-based sampler: uniform (log-uniform / choice-uniform)
// startup, then an independent per-parameter Parzen good/bad split scored by
// sum of log density ratios over a fixed candidate pool.
class StudyState {
  public:
    StudyState(SearchSpace space, std::uint64_t seed, int n_startup = 10,
               double gamma_fraction = 0.25, int n_candidates = 24);

    ConfigMap suggest();
    void record(const Trial& trial);  // validates the config against the space
    bool budget_exhausted(const Budget& budget, double elapsed_seconds) const;

    const std::vector<Trial>& history() const { return history_; }
    const SearchSpace& space() const { return space_; }

  private:
    ConfigMap sample_uniform();
    ConfigMap sample_tpe(const std::vector<const Trial*>& completed);

    SearchSpace space_;
    Rng rng_;
    int n_startup_;
    double gamma_fraction_;
    int n_candidates_;
    std::vector<Trial> history_;
};

}  // namespace bench
