#include "bench/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bench {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

ParamSpec int_param(std::string name, double low, double high) {
    return {std::move(name), ParamKind::integer, low, high, false, {}};
}
ParamSpec real_param(std::string name, double low, double high, bool log_scale = false) {
    return {std::move(name), ParamKind::real, low, high, log_scale, {}};
}
ParamSpec cat_param(std::string name, std::vector<double> choices) {
    return {std::move(name), ParamKind::categorical, 0, 0, false, std::move(choices)};
}

std::vector<ParamSpec> residual_family_space(bool with_cardinality) {
    std::vector<ParamSpec> p{
        int_param("n_layers", 1, 8),
        int_param("layer_size", 64, 1024),
        real_param("d_hidden_factor", 1.0, 4.0),
        real_param("hidden_dropout", 0.0, 0.5),
        real_param("residual_dropout", 0.0, 0.5),
        int_param("d_embedding", 64, 512),
        real_param("learning_rate", 1e-5, 1e-2, true),
        real_param("weight_decay", 1e-6, 1e-3, true),
    };
    if (with_cardinality) p.push_back(cat_param("cardinality", {2, 4, 8, 16, 32}));
    return p;
}

// Observation domain: log10 for log-scaled parameters, identity otherwise.
double to_domain(const ParamSpec& spec, double x) {
    return spec.log_scale ? std::log10(x) : x;
}
double from_domain(const ParamSpec& spec, double z) {
    return spec.log_scale ? std::pow(10.0, z) : z;
}

struct NumericDensity {
    std::vector<double> centers;  // in the observation domain
    double bandwidth = 0.0;
    double low = 0.0, high = 0.0;

    static NumericDensity fit(const ParamSpec& spec, const std::vector<double>& values) {
        NumericDensity d;
        d.low = to_domain(spec, spec.low);
        d.high = to_domain(spec, spec.high);
        for (double v : values) d.centers.push_back(to_domain(spec, v));
        const double range = d.high - d.low;
        const double n = static_cast<double>(d.centers.size());
        double mean = std::accumulate(d.centers.begin(), d.centers.end(), 0.0) / n;
        double var = 0.0;
        for (double c : d.centers) var += (c - mean) * (c - mean);
        const double sd = std::sqrt(var / n);
        // Silverman-style width, kept within a fraction of the full range so a
        // tight cluster still has nonzero spread and a loose one stays local.
        d.bandwidth = 1.06 * (sd > 0 ? sd : range) * std::pow(n, -0.2);
        d.bandwidth = std::clamp(d.bandwidth, range * 1e-3, range);
        return d;
    }

    double pdf(double z) const {
        double total = 0.0;
        for (double c : centers) {
            const double mass =
                normal_cdf((high - c) / bandwidth) - normal_cdf((low - c) / bandwidth);
            total += normal_pdf((z - c) / bandwidth) / (bandwidth * std::max(mass, 1e-12));
        }
        return std::max(total / static_cast<double>(centers.size()), 1e-300);
    }

    double sample(Rng& rng) const {
        const double c = centers[std::uniform_int_distribution<std::size_t>(
            0, centers.size() - 1)(rng)];
        std::normal_distribution<double> g(c, bandwidth);
        for (int attempt = 0; attempt < 1000; ++attempt) {
            const double z = g(rng);
            if (z >= low && z <= high) return z;
        }
        return std::clamp(c, low, high);
    }
};

struct CategoricalDensity {
    std::vector<double> probs;  // Dirichlet prior count 1 per choice

    static CategoricalDensity fit(const ParamSpec& spec, const std::vector<double>& values) {
        CategoricalDensity d;
        d.probs.assign(spec.choices.size(), 1.0);  // prior
        for (double v : values)
            for (std::size_t i = 0; i < spec.choices.size(); ++i)
                if (v == spec.choices[i]) d.probs[i] += 1.0;
        const double total = std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
        for (auto& p : d.probs) p /= total;
        return d;
    }

    std::size_t sample(Rng& rng) const {
        return std::discrete_distribution<std::size_t>(probs.begin(), probs.end())(rng);
    }
};

double clamp_to_spec(const ParamSpec& spec, double v) {
    if (spec.kind == ParamKind::integer)
        return std::clamp(std::round(v), spec.low, spec.high);
    return std::clamp(v, spec.low, spec.high);
}

void validate_spec(const ParamSpec& spec) {
    if (spec.kind == ParamKind::categorical) {
        if (spec.choices.empty()) throw ConfigError(spec.name + ": no choices");
        return;
    }
    if (!(spec.low < spec.high)) throw ConfigError(spec.name + ": empty range");
    if (spec.log_scale && spec.low <= 0)
        throw ConfigError(spec.name + ": log scale needs a positive lower bound");
}

}  // namespace

const ParamSpec* SearchSpace::find(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

SearchSpace space_for(const std::string& tag) {
    if (tag == "resnext") return {"resnext", residual_family_space(true)};
    if (tag == "resnet") return {"resnet", residual_family_space(false)};
    if (tag == "ft")
        return {"ft",
                {
                    int_param("n_layers", 1, 6),
                    int_param("d_token", 64, 512),
                    real_param("residual_dropout", 0.0, 0.2),
                    real_param("attn_dropout", 0.0, 0.5),
                    real_param("ffn_dropout", 0.0, 0.5),
                    real_param("d_ffn_factor", 2.0 / 3.0, 8.0 / 3.0),
                    real_param("learning_rate", 1e-5, 1e-3, true),
                    real_param("weight_decay", 1e-6, 1e-3, true),
                }};
    throw ConfigError("unknown search space tag: " + tag);
}

StudyState::StudyState(SearchSpace space, std::uint64_t seed, int n_startup,
                       double gamma_fraction, int n_candidates)
    : space_(std::move(space)),
      rng_(seed),
      n_startup_(n_startup),
      gamma_fraction_(gamma_fraction),
      n_candidates_(n_candidates) {
    if (space_.params.empty()) throw ConfigError("search space is empty");
    for (const auto& p : space_.params) validate_spec(p);
    if (n_candidates_ < 1) throw ConfigError("n_candidates must be positive");
    if (gamma_fraction_ <= 0 || gamma_fraction_ >= 1)
        throw ConfigError("gamma_fraction must be in (0, 1)");
}

ConfigMap StudyState::sample_uniform() {
    ConfigMap cfg;
    for (const auto& spec : space_.params) {
        switch (spec.kind) {
            case ParamKind::integer:
                cfg[spec.name] = static_cast<double>(std::uniform_int_distribution<long>(
                    static_cast<long>(spec.low), static_cast<long>(spec.high))(rng_));
                break;
            case ParamKind::real: {
                const double z = std::uniform_real_distribution<double>(
                    to_domain(spec, spec.low), to_domain(spec, spec.high))(rng_);
                cfg[spec.name] = clamp_to_spec(spec, from_domain(spec, z));
                break;
            }
            case ParamKind::categorical:
                cfg[spec.name] = spec.choices[std::uniform_int_distribution<std::size_t>(
                    0, spec.choices.size() - 1)(rng_)];
                break;
        }
    }
    return cfg;
}

ConfigMap StudyState::sample_tpe(const std::vector<const Trial*>& completed) {
    // objective-descending split: the top ceil(gamma*n) form the good set
    std::vector<const Trial*> sorted = completed;
    std::stable_sort(sorted.begin(), sorted.end(), [](const Trial* a, const Trial* b) {
        return a->objective > b->objective;
    });
    const std::size_t n_good = static_cast<std::size_t>(
        std::ceil(gamma_fraction_ * static_cast<double>(sorted.size())));
    if (n_good == 0 || n_good >= sorted.size()) return sample_uniform();

    struct ParamModel {
        const ParamSpec* spec;
        NumericDensity good_num, bad_num;
        CategoricalDensity good_cat, bad_cat;
    };
    std::vector<ParamModel> models;
    for (const auto& spec : space_.params) {
        std::vector<double> good_vals, bad_vals;
        for (std::size_t i = 0; i < sorted.size(); ++i)
            (i < n_good ? good_vals : bad_vals).push_back(sorted[i]->config.at(spec.name));
        ParamModel m{&spec, {}, {}, {}, {}};
        if (spec.kind == ParamKind::categorical) {
            m.good_cat = CategoricalDensity::fit(spec, good_vals);
            m.bad_cat = CategoricalDensity::fit(spec, bad_vals);
        } else {
            m.good_num = NumericDensity::fit(spec, good_vals);
            m.bad_num = NumericDensity::fit(spec, bad_vals);
        }
        models.push_back(std::move(m));
    }

    ConfigMap best;
    double best_score = -1e300;
    for (int c = 0; c < n_candidates_; ++c) {
        ConfigMap cand;
        double score = 0.0;
        for (const auto& m : models) {
            if (m.spec->kind == ParamKind::categorical) {
                const std::size_t idx = m.good_cat.sample(rng_);
                cand[m.spec->name] = m.spec->choices[idx];
                score += std::log(m.good_cat.probs[idx]) - std::log(m.bad_cat.probs[idx]);
            } else {
                const double z = m.good_num.sample(rng_);
                cand[m.spec->name] = clamp_to_spec(*m.spec, from_domain(*m.spec, z));
                score += std::log(m.good_num.pdf(z)) - std::log(m.bad_num.pdf(z));
            }
        }
        if (score > best_score) {
            best_score = score;
            best = std::move(cand);
        }
    }
    return best;
}

ConfigMap StudyState::suggest() {
    std::vector<const Trial*> completed;
    for (const auto& t : history_)
        if (t.status == TrialStatus::complete) completed.push_back(&t);
    if (static_cast<int>(completed.size()) < n_startup_) return sample_uniform();
    return sample_tpe(completed);
}

void StudyState::record(const Trial& trial) {
    for (const auto& spec : space_.params) {
        auto it = trial.config.find(spec.name);
        if (it == trial.config.end())
            throw ConfigError("trial config missing parameter " + spec.name);
        const double v = it->second;
        if (spec.kind == ParamKind::categorical) {
            if (std::find(spec.choices.begin(), spec.choices.end(), v) == spec.choices.end())
                throw ConfigError("trial config has invalid choice for " + spec.name);
        } else if (v < spec.low || v > spec.high) {
            throw ConfigError("trial config out of range for " + spec.name);
        }
    }
    if (trial.config.size() != space_.params.size())
        throw ConfigError("trial config has parameters outside the space");
    history_.push_back(trial);
}

bool StudyState::budget_exhausted(const Budget& budget, double elapsed_seconds) const {
    if (budget.max_trials <= 0 || budget.max_wall_clock <= 0)
        throw ConfigError("budget limits must be positive");
    return static_cast<int>(history_.size()) >= budget.max_trials ||
           elapsed_seconds >= budget.max_wall_clock;
}

}  // namespace bench
