#include "tdvsm/margin.hpp"

#include <atomic>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "tdvsm/errors.hpp"

namespace tdvsm {

Eigen::MatrixXd Dataset::features() const
{
    const auto n = static_cast<Eigen::Index>(samples.size());
    const auto d = n ? samples.front().x.size() : Eigen::Index(0);
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) m.row(i) = samples[static_cast<std::size_t>(i)].x.transpose();
    return m;
}

Eigen::VectorXd Dataset::targets() const
{
    Eigen::VectorXd y(static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) y(static_cast<Eigen::Index>(i)) = samples[i].vsm;
    return y;
}

std::uint64_t scenario_seed(std::uint64_t master, std::uint64_t index)
{
    std::uint64_t z = master + (index + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

class Sampler {
public:
    Sampler(std::uint64_t seed, Spread kind) : rng_(seed), kind_(kind) {}

    double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

    // value in [-s, s]
    double offset(double s)
    {
        if (s == 0.0) return 0.0;
        if (kind_ == Spread::uniform) return s * (2.0 * unit() - 1.0);
        std::normal_distribution<double> n(0.0, s / 2.0);
        for (;;) {
            const double z = n(rng_);
            if (std::abs(z) <= s) return z;
        }
    }

    std::size_t pick(std::size_t n) { return n <= 1 ? 0 : std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

private:
    std::mt19937_64 rng_;
    Spread kind_;
};

int slack_unit(const TransmissionNetwork& net)
{
    const auto sites = gen_sites(net);
    const int s = net.slack_index();
    for (std::size_t u = 0; u < sites.size(); ++u)
        if (sites[u].bus_index == s) return static_cast<int>(u);
    throw CaseError("slack bus carries no generating unit");
}

bool slack_within_limits(const TransmissionNetwork& net, const CoSimResult& r)
{
    const auto sites = gen_sites(net);
    const int u = slack_unit(net);
    const double p = r.tx.gen_p[u];
    return p >= 0.0 && p <= sites[u].p_max;
}

}  // namespace

Scenario sample_scenario(const TdSystem& base, const ScenarioConfig& cfg, std::uint64_t seed, const MarginOptions& mopt)
{
    if (cfg.profiles.empty()) throw PreconditionError("at least one generation-mix profile is required");
    Sampler rs(seed, cfg.distribution);
    for (int attempt = 0; attempt < std::max(1, cfg.max_resample); ++attempt) {
        Scenario sc;
        sc.seed = seed;
        const auto& prof = cfg.profiles[rs.pick(cfg.profiles.size())];
        sc.profile = prof.name;
        sc.sys = base;
        auto& net = sc.sys.net;

        for (auto& b : net.buses) {
            if (b.load_p == 0.0 && b.load_q == 0.0) continue;
            b.load_p *= 1.0 + rs.offset(cfg.load_p_spread);
            b.load_q *= 1.0 + rs.offset(cfg.load_q_spread);
        }
        for (auto& f : sc.sys.link_feeders) {
            const double mp = 1.0 + rs.offset(cfg.load_p_spread);
            const double mq = 1.0 + rs.offset(cfg.load_q_spread);
            f = f.scaled(mp, mq);
        }
        const int slack = net.slack_bus;
        for (auto& g : net.generators) {
            if (g.bus != slack) g.p_out = std::clamp(g.p_out * (1.0 + rs.offset(cfg.gen_p_spread)), 0.0, g.p_max);
            if (cfg.sample_vg) g.v_set += rs.offset(cfg.vg_spread);
        }
        for (auto& u : net.ibrs) {
            if (!prof.use_case_output) {
                const bool wind = u.kind == IbrKind::wind;
                const double lo = wind ? prof.wind_lo : prof.solar_lo, hi = wind ? prof.wind_hi : prof.solar_hi;
                u.p_out = u.icr * (lo + (hi - lo) * rs.unit());
            }
            if (cfg.sample_vg) u.v_set += rs.offset(cfg.vg_spread);
        }

        const auto r = cosimulate(sc.sys, mopt.cosim);
        if (r.converged && slack_within_limits(net, r)) return sc;
    }
    throw InfeasibleError(fmt::format("scenario {}: no feasible base point after {} draws", seed, cfg.max_resample));
}

double total_load_mw(const CoSimResult& r)
{
    double s = 0.0;
    for (double p : r.bus_loads.p) s += p;
    return s;
}

TdSystem scale_loading(const TdSystem& sys, double lambda, double base_load_mw)
{
    TdSystem out = sys;
    for (auto& b : out.net.buses) {
        b.load_p *= lambda;
        b.load_q *= lambda;
    }
    for (auto& f : out.link_feeders) f = f.scaled(lambda, lambda);

    const double extra = (lambda - 1.0) * base_load_mw;
    if (extra <= 0.0) return out;
    double headroom = 0.0;
    for (const auto& g : out.net.generators)
        if (g.bus != out.net.slack_bus) headroom += std::max(0.0, g.p_max - g.p_out);
    if (headroom <= 0.0) return out;
    const double share = std::min(extra, headroom) / headroom;
    for (auto& g : out.net.generators)
        if (g.bus != out.net.slack_bus) g.p_out += share * std::max(0.0, g.p_max - g.p_out);
    return out;
}

namespace {

struct Base {
    TdSystem sys;
    CoSimResult res;
    double load_mw = 0.0;
};

Base base_point(const TdSystem& sys, const Contingency& c, const MarginOptions& opt)
{
    Base b;
    b.sys = sys;
    if (c.kind != Contingency::Kind::none) b.sys.net = apply_contingency(sys.net, c);
    b.res = cosimulate(b.sys, opt.cosim);
    if (!b.res.converged) throw InfeasibleError(fmt::format("base point does not converge under {}", c.id()));
    b.load_mw = total_load_mw(b.res);
    return b;
}

VsmSample finish(const Base& b, const Contingency& c, double lambda)
{
    VsmSample s;
    s.contingency = c.id();
    s.x = state_vector(b.sys, b.res);
    s.lambda_max = lambda;
    s.vsm = (lambda - 1.0) * b.load_mw;
    return s;
}

}  // namespace

VsmSample compute_vsm(const TdSystem& sys, const Contingency& c, const MarginOptions& opt)
{
    const auto b = base_point(sys, c, opt);
    auto at = [&](double lam, const CoSimResult& warm) {
        return cosimulate(scale_loading(b.sys, lam, b.load_mw), opt.cosim, &warm);
    };

    double good = 1.0, bad = 0.0;
    CoSimResult good_res = b.res;
    for (;;) {
        const double next = std::min(good + opt.step, opt.lambda_cap);
        if (next <= good) return finish(b, c, good);
        auto r = at(next, good_res);
        if (!r.converged) {
            bad = next;
            break;
        }
        good = next;
        good_res = std::move(r);
    }
    while (bad - good > opt.width) {
        const double mid = 0.5 * (good + bad);
        auto r = at(mid, good_res);
        if (r.converged) {
            good = mid;
            good_res = std::move(r);
        } else {
            bad = mid;
        }
    }
    return finish(b, c, good);
}

VsmSample scan_vsm(const TdSystem& sys, const Contingency& c, double step, const MarginOptions& opt)
{
    const auto b = base_point(sys, c, opt);
    CoSimResult good_res = b.res;
    for (long k = 1;; ++k) {
        const double lam = 1.0 + static_cast<double>(k) * step;
        if (lam > opt.lambda_cap) return finish(b, c, 1.0 + static_cast<double>(k - 1) * step);
        auto r = cosimulate(scale_loading(b.sys, lam, b.load_mw), opt.cosim, &good_res);
        if (!r.converged) return finish(b, c, 1.0 + static_cast<double>(k - 1) * step);
        good_res = std::move(r);
    }
}

DatasetReport generate_dataset(const Case& c, const DatasetConfig& cfg)
{
    const TdSystem base = make_system(c);
    std::vector<Contingency> conts{Contingency::none()};
    for (const auto& k : cfg.contingencies)
        if (k.kind != Contingency::Kind::none) conts.push_back(k);

    struct Slot {
        std::optional<VsmSample> sample;
        std::string skipped;
    };
    const auto ns = static_cast<std::size_t>(std::max(0, cfg.scenarios));
    std::vector<std::vector<Slot>> slots(ns, std::vector<Slot>(conts.size()));
    std::vector<std::uint64_t> seeds(ns);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < ns; i = next++) {
            seeds[i] = scenario_seed(cfg.seed, i);
            std::optional<Scenario> sc;
            std::string why;
            try {
                sc = sample_scenario(base, cfg.sampling, seeds[i], cfg.margin);
            } catch (const std::exception& e) {
                why = e.what();
            }
            for (std::size_t k = 0; k < conts.size(); ++k) {
                auto& slot = slots[i][k];
                if (!sc) {
                    slot.skipped = why;
                    continue;
                }
                try {
                    slot.sample = compute_vsm(sc->sys, conts[k], cfg.margin);
                    slot.sample->seed = seeds[i];
                } catch (const std::exception& e) {
                    slot.skipped = e.what();
                }
            }
        }
    };
    const int jobs = std::max(1, cfg.jobs);
    {
        std::vector<std::jthread> pool;
        for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
        worker();
    }

    DatasetReport rep;
    rep.data.feature_names = state_layout(c.network).names();
    for (std::size_t i = 0; i < ns; ++i) {
        const auto& none = slots[i][0].sample;
        for (std::size_t k = 0; k < conts.size(); ++k) {
            const auto& slot = slots[i][k];
            if (!slot.sample) {
                rep.skipped.push_back(fmt::format("{},{}: {}", seeds[i], conts[k].id(), slot.skipped));
                spdlog::debug("skipped sample {},{}: {}", seeds[i], conts[k].id(), slot.skipped);
                continue;
            }
            if (k > 0 && none && slot.sample->vsm > none->vsm + 1e-9) {
                rep.anomalies.push_back(fmt::format("{},{}: margin {:.4f} MW above base {:.4f} MW", seeds[i],
                                                    conts[k].id(), slot.sample->vsm, none->vsm));
                spdlog::debug("anomaly {}", rep.anomalies.back());
            }
            rep.data.samples.push_back(*slot.sample);
        }
    }
    return rep;
}

void write_dataset_csv(std::ostream& out, const Dataset& d)
{
    out << "seed,contingency";
    for (const auto& n : d.feature_names) out << ',' << n;
    out << ",lambda_max,vsm_mw\n";
    for (const auto& s : d.samples) {
        out << s.seed << ',' << s.contingency;
        for (Eigen::Index i = 0; i < s.x.size(); ++i) out << fmt::format(",{:.9g}", s.x(i));
        out << fmt::format(",{:.9g},{:.9g}\n", s.lambda_max, s.vsm);
    }
}

Dataset read_dataset_csv(std::istream& in)
{
    auto split = [](const std::string& line) {
        std::vector<std::string> out;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        return out;
    };
    Dataset d;
    std::string line;
    if (!std::getline(in, line)) return d;
    const auto head = split(line);
    if (head.size() < 4 || head[0] != "seed" || head[1] != "contingency" || head[head.size() - 2] != "lambda_max" ||
        head.back() != "vsm_mw")
        throw CaseError("dataset header must be seed,contingency,<features>,lambda_max,vsm_mw");
    d.feature_names.assign(head.begin() + 2, head.end() - 2);
    const auto dim = d.feature_names.size();
    for (int row = 2; std::getline(in, line); ++row) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != head.size()) throw CaseError(fmt::format("dataset line {}: expected {} columns", row, head.size()));
        try {
            VsmSample s;
            s.seed = std::stoull(cells[0]);
            s.contingency = cells[1];
            s.x.resize(static_cast<Eigen::Index>(dim));
            for (std::size_t i = 0; i < dim; ++i) s.x(static_cast<Eigen::Index>(i)) = std::stod(cells[2 + i]);
            s.lambda_max = std::stod(cells[dim + 2]);
            s.vsm = std::stod(cells[dim + 3]);
            d.samples.push_back(std::move(s));
        } catch (const std::logic_error&) {
            throw CaseError(fmt::format("dataset line {}: malformed number", row));
        }
    }
    return d;
}

}  // namespace tdvsm
