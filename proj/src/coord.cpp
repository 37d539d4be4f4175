#include "tdvsm/coord.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "tdvsm/errors.hpp"

namespace tdvsm {

using ojson = nlohmann::ordered_json;

const char* to_string(WeightMode m) { return m == WeightMode::sensitivity ? "sensitivity" : "equal"; }

WeightMode weight_mode_from(const std::string& s)
{
    if (s == "sensitivity") return WeightMode::sensitivity;
    if (s == "equal") return WeightMode::equal;
    throw PreconditionError(fmt::format("unknown weight mode '{}' (sensitivity|equal)", s));
}

namespace {

template <class F>
void parallel_for(int n, int jobs, F&& body)
{
    std::atomic<int> next{0};
    std::exception_ptr first;
    std::mutex m;
    auto worker = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(m);
                if (!first) first = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (int t = 1; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
        worker();
    }
    if (first) std::rethrow_exception(first);
}

int count_active(const TsoDispatch& d, double tol, std::set<int>* used)
{
    int n = 0;
    const auto nu = d.dv_g.size();
    for (Eigen::Index i = 0; i < nu + d.dq_l.size(); ++i) {
        const double v = i < nu ? d.dv_g(i) : d.dq_l(i - nu);
        if (std::abs(v) <= tol) continue;
        ++n;
        if (used) used->insert(static_cast<int>(i));
    }
    return n;
}

FeederStep dso_step(FeederModel& feeder, const BoundaryLink& link, int l, double dq, double v_tm, const MlpModel* dx_model,
                    const CoordOptions& opt)
{
    FeederStep s;
    s.link = l;
    s.feeder = link.feeder;
    s.tx_bus = link.tx_bus;
    s.beta = link.beta;
    const double to_mvar = link.beta / 1000.0;
    s.support_before = der_q_total(feeder) * to_mvar;
    s.requested = dq;

    const auto cr = capability_range(feeder, v_tm);
    s.capability_min = cr.q_min_agg * to_mvar;
    s.capability_max = cr.q_max_agg * to_mvar;
    const double want = std::clamp(s.support_before + dq, s.capability_min, s.capability_max);
    s.applied = want - s.support_before;
    s.shortfall = s.requested - s.applied;
    if (std::abs(s.shortfall) > 1e-9)
        spdlog::warn("feeder {} at bus {}: request {:+.4f} MVAr clamped to {:+.4f} (capability [{:.4f}, {:.4f}] MVAr)",
                     link.feeder, link.tx_bus, dq, s.applied, s.capability_min, s.capability_max);

    Eigen::VectorXd w;
    if (dx_model) {
        Eigen::VectorXd q_op(static_cast<Eigen::Index>(feeder.ders.size()));
        for (std::size_t k = 0; k < feeder.ders.size(); ++k) q_op(static_cast<Eigen::Index>(k)) = feeder.ders[k].q_total();
        w = dx_weights(*dx_model, q_op);
    } else {
        w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(feeder.ders.size()));
    }
    s.weights.assign(w.data(), w.data() + w.size());

    RedispatchOptions ro;
    ro.alpha = opt.alpha;
    ro.eps_band = opt.eps_band;
    ro.v_tm = v_tm;
    s.dispatch = redispatch(feeder, want, link, w, ro);
    apply_redispatch(feeder, s.dispatch);
    s.realized = s.dispatch.q_agg * to_mvar - s.support_before;
    return s;
}

}  // namespace

CoordinationTrace run_loop(const TdSystem& sys, const MlpModel& vsm_model, const std::vector<MlpModel>& dx_models,
                           const CoordOptions& opt, TdSystem* final_sys)
{
    const auto nl = sys.net.boundary_links.size();
    if (opt.weights == WeightMode::sensitivity && dx_models.size() != nl)
        throw PreconditionError(fmt::format("{} distribution models for {} boundary links", dx_models.size(), nl));
    if (opt.max_iters < 0) throw PreconditionError("iteration cap must be non-negative");

    CoordinationTrace t;
    t.target = opt.target;
    t.weights = opt.weights;
    for (const auto& s : gen_sites(sys.net)) {
        const int id = sys.net.buses[s.bus_index].id;
        t.unit_names.push_back(fmt::format("{}{}", s.ibr ? "IBR" : "G", id));
        t.unit_buses.push_back(id);
    }
    for (const auto& l : sys.net.boundary_links) {
        t.link_names.push_back(fmt::format("L{}:{}", l.tx_bus, l.feeder));
        t.link_buses.push_back(l.tx_bus);
    }

    TdSystem cur = sys;
    auto state = cosimulate(cur, opt.cosim);
    if (!state.converged) throw NumericalError("base co-simulation does not converge");
    double vsm = surrogate_vsm(cur, state, vsm_model);
    t.vsm_initial = vsm;
    std::set<int> used;

    for (int it = 1;; ++it) {
        if (vsm >= opt.target - opt.tol) {
            t.converged = true;
            break;
        }
        if (it > opt.max_iters) {
            t.message = fmt::format("target not reached after {} iterations", opt.max_iters);
            break;
        }

        IterationRecord rec;
        rec.iteration = it;
        rec.vsm_before = vsm;
        const auto p = build_tso_problem(cur, state, vsm_model, opt.target, {opt.weights});
        rec.grad_v = p.grad_v;
        rec.grad_q = p.grad_q;
        rec.weights = p.weights;
        TsoDispatch d;
        try {
            d = solve_tso(p);
        } catch (const TargetUnreachableError& e) {
            spdlog::warn("iteration {}: {}", it, e.what());
            d = e.best;
            rec.target_reachable = false;
        }
        rec.dv_g = d.dv_g;
        rec.dq_l = d.dq_l;
        rec.vsm_predicted = d.vsm_predicted;
        rec.tso_active = d.active;
        rec.tso_kkt = d.kkt;
        rec.requested_mvar = d.dq_l.cwiseAbs().sum();
        rec.active_controls = count_active(d, opt.active_tol, &used);

        std::vector<int> asked;
        for (std::size_t l = 0; l < nl; ++l)
            if (d.dq_l(static_cast<Eigen::Index>(l)) != 0.0) asked.push_back(static_cast<int>(l));
        rec.feeders.resize(asked.size());
        parallel_for(static_cast<int>(asked.size()), std::max(1, opt.jobs), [&](int i) {
            const auto l = static_cast<std::size_t>(asked[static_cast<std::size_t>(i)]);
            const auto& link = cur.net.boundary_links[l];
            const double v_tm = state.tx.v_mag[static_cast<std::size_t>(cur.net.bus_index(link.tx_bus))];
            const MlpModel* dx = opt.weights == WeightMode::sensitivity ? &dx_models[l] : nullptr;
            rec.feeders[static_cast<std::size_t>(i)] =
                dso_step(cur.link_feeders[l], link, static_cast<int>(l), d.dq_l(static_cast<Eigen::Index>(l)), v_tm, dx, opt);
        });

        cur = shift_setpoints(cur, d.dv_g);
        auto next = cosimulate(cur, opt.cosim, &state);
        if (!next.converged) {
            t.iterations.push_back(std::move(rec));
            t.aborted = true;
            t.message = fmt::format("co-simulation diverged after applying the iteration {} dispatch", it);
            break;
        }
        state = std::move(next);
        const double verified = surrogate_vsm(cur, state, vsm_model);
        rec.vsm_verified = verified;
        rec.gap = opt.target - verified;
        for (std::size_t b = 0; b < cur.net.buses.size(); ++b) {
            const double vm = state.tx.v_mag[b];
            rec.v_violation = std::max({rec.v_violation, vm - cur.net.buses[b].v_max, cur.net.buses[b].v_min - vm});
        }
        spdlog::info("iteration {}: VSM {:.3f} -> {:.3f} MW (predicted {:.3f}, target {:.3f}), {:.4f} MVAr requested, {} controls",
                     it, vsm, verified, rec.vsm_predicted, opt.target, rec.requested_mvar, rec.active_controls);
        t.total_requested_mvar += rec.requested_mvar;
        t.iterations.push_back(std::move(rec));
        if (verified < vsm - opt.max_drop) {
            t.aborted = true;
            t.message = fmt::format("verified VSM fell from {:.3f} to {:.3f} MW in iteration {}", vsm, verified, it);
            vsm = verified;
            break;
        }
        vsm = verified;
    }
    t.vsm_final = vsm;
    t.controllers_used = static_cast<int>(used.size());
    if (final_sys) *final_sys = std::move(cur);
    return t;
}

// ---------------------------------------------------------------------------

namespace {

ojson vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

ojson kkt_json(const KktReport& k)
{
    return {{"stationarity", k.stationarity}, {"primal", k.primal}, {"dual_sign", k.dual_sign}, {"complementarity", k.complementarity}};
}

std::string num(double v) { return fmt::format("{:.10g}", v); }

}  // namespace

void write_trace(std::ostream& out, const CoordinationTrace& t)
{
    ojson j;
    j["case"] = t.case_name;
    j["weights"] = to_string(t.weights);
    j["target_mw"] = t.target;
    j["vsm_initial_mw"] = t.vsm_initial;
    j["vsm_final_mw"] = t.vsm_final;
    j["converged"] = t.converged;
    j["aborted"] = t.aborted;
    j["message"] = t.message;
    j["iteration_count"] = t.iterations.size();
    j["total_requested_mvar"] = t.total_requested_mvar;
    j["controllers_used"] = t.controllers_used;
    j["units"] = t.unit_names;
    j["unit_buses"] = t.unit_buses;
    j["links"] = t.link_names;
    j["link_buses"] = t.link_buses;
    j["iterations"] = ojson::array();
    for (const auto& r : t.iterations) {
        ojson it;
        it["iteration"] = r.iteration;
        it["vsm_before_mw"] = r.vsm_before;
        it["vsm_predicted_mw"] = r.vsm_predicted;
        it["vsm_verified_mw"] = r.vsm_verified;
        it["gap_mw"] = r.gap;
        it["target_reachable"] = r.target_reachable;
        it["requested_mvar"] = r.requested_mvar;
        it["active_controls"] = r.active_controls;
        it["v_violation_pu"] = r.v_violation;
        it["tso"] = {{"grad_v", vec(r.grad_v)}, {"grad_q", vec(r.grad_q)}, {"a_v", vec(r.weights.a_v)},
                     {"a_q", vec(r.weights.a_q)}, {"dv_g", vec(r.dv_g)},       {"dq_l", vec(r.dq_l)},
                     {"active", r.tso_active}, {"kkt", kkt_json(r.tso_kkt)}};
        it["feeders"] = ojson::array();
        for (const auto& f : r.feeders) {
            ojson fj;
            fj["link"] = f.link;
            fj["feeder"] = f.feeder;
            fj["tx_bus"] = f.tx_bus;
            fj["beta"] = f.beta;
            fj["support_before_mvar"] = f.support_before;
            fj["requested_mvar"] = f.requested;
            fj["applied_mvar"] = f.applied;
            fj["shortfall_mvar"] = f.shortfall;
            fj["realized_mvar"] = f.realized;
            fj["capability_mvar"] = {f.capability_min, f.capability_max};
            fj["v0_pu"] = f.dispatch.v0;
            fj["objective"] = f.dispatch.objective;
            fj["active"] = f.dispatch.active;
            fj["kkt"] = kkt_json(f.dispatch.kkt);
            fj["ders"] = ojson::array();
            for (std::size_t k = 0; k < f.dispatch.q_phase.size(); ++k) {
                const auto& q = f.dispatch.q_phase[k];
                fj["ders"].push_back({{"index", k}, {"weight", f.weights[k]}, {"q_phase_kvar", {q[0], q[1], q[2]}}});
            }
            it["feeders"].push_back(std::move(fj));
        }
        j["iterations"].push_back(std::move(it));
    }
    out << j.dump(2) << '\n';
}

void write_vsm_csv(std::ostream& out, const CoordinationTrace& t)
{
    out << "iteration,vsm_before_mw,vsm_predicted_mw,vsm_verified_mw,gap_mw,requested_mvar,active_controls,target_reachable\n";
    out << fmt::format("0,,,{},{},0,0,\n", num(t.vsm_initial), num(t.target - t.vsm_initial));
    for (const auto& r : t.iterations)
        out << fmt::format("{},{},{},{},{},{},{},{}\n", r.iteration, num(r.vsm_before), num(r.vsm_predicted), num(r.vsm_verified),
                           num(r.gap), num(r.requested_mvar), r.active_controls, r.target_reachable ? 1 : 0);
}

void write_dispatch_tx_csv(std::ostream& out, const CoordinationTrace& t)
{
    out << "iteration,control,kind,bus,weight,sensitivity,delta\n";
    for (const auto& r : t.iterations) {
        for (Eigen::Index u = 0; u < r.dv_g.size(); ++u)
            out << fmt::format("{},{},vset_pu,{},{},{},{}\n", r.iteration, t.unit_names[static_cast<std::size_t>(u)],
                               t.unit_buses[static_cast<std::size_t>(u)], num(r.weights.a_v(u)), num(r.grad_v(u)), num(r.dv_g(u)));
        for (Eigen::Index l = 0; l < r.dq_l.size(); ++l)
            out << fmt::format("{},{},dq_mvar,{},{},{},{}\n", r.iteration, t.link_names[static_cast<std::size_t>(l)],
                               t.link_buses[static_cast<std::size_t>(l)], num(r.weights.a_q(l)), num(r.grad_q(l)), num(r.dq_l(l)));
    }
}

void write_dispatch_dx_csv(std::ostream& out, const CoordinationTrace& t, int link)
{
    out << "iteration,der_node,weight,q_a_kvar,q_b_kvar,q_c_kvar,q_total_kvar\n";
    for (const auto& r : t.iterations)
        for (const auto& f : r.feeders) {
            if (f.link != link) continue;
            for (std::size_t k = 0; k < f.dispatch.q_phase.size(); ++k) {
                const auto& q = f.dispatch.q_phase[k];
                out << fmt::format("{},{},{},{},{},{},{}\n", r.iteration, k + 1, num(f.weights[k]), num(q[0]), num(q[1]), num(q[2]),
                                   num(f.dispatch.q[k]));
            }
        }
}

// ---------------------------------------------------------------------------

namespace {

std::string f3(double v) { return fmt::format("{:.3f}", v); }
std::string f4(double v) { return fmt::format("{:.4f}", v); }

void table(std::ostringstream& o, const std::vector<std::string>& head, const std::vector<std::vector<std::string>>& rows)
{
    o << '|';
    for (const auto& h : head) o << ' ' << h << " |";
    o << "\n|";
    for (std::size_t i = 0; i < head.size(); ++i) o << (i == 0 ? " --- |" : " ---: |");
    o << '\n';
    for (const auto& r : rows) {
        o << '|';
        for (const auto& c : r) o << ' ' << c << " |";
        o << '\n';
    }
    o << '\n';
}

double first_verified(const ojson& t)
{
    const auto& its = t["iterations"];
    return its.empty() ? t["vsm_initial_mw"].get<double>() : its[0]["vsm_verified_mw"].get<double>();
}

void one_trace(std::ostringstream& o, const ojson& t)
{
    o << "## " << t["case"].get<std::string>() << ", " << t["weights"].get<std::string>() << " weights\n\n";
    table(o, {"Quantity", "Value"},
          {{"Target VSM (MW)", f3(t["target_mw"])},
           {"Initial VSM (MW)", f3(t["vsm_initial_mw"])},
           {"Final VSM (MW)", f3(t["vsm_final_mw"])},
           {"Iterations", std::to_string(t["iteration_count"].get<int>())},
           {"Converged", t["converged"].get<bool>() ? "yes" : "no"},
           {"Requested MVAr", f4(t["total_requested_mvar"])},
           {"Controllers used", std::to_string(t["controllers_used"].get<int>())}});
    if (!t["message"].get<std::string>().empty()) o << "Note: " << t["message"].get<std::string>() << "\n\n";

    const auto& its = t["iterations"];
    if (its.empty()) return;

    o << "### VSM sensitivities and weights (first iteration)\n\n";
    const auto& tso = its[0]["tso"];
    std::vector<std::vector<std::string>> rows;
    for (std::size_t u = 0; u < t["units"].size(); ++u)
        rows.push_back({t["units"][u].get<std::string>(), f3(tso["grad_v"][u]), f4(tso["a_v"][u]), f4(tso["dv_g"][u])});
    table(o, {"Unit", "dVSM/dVg (MW/pu)", "a^V", "dVg (pu)"}, rows);
    rows.clear();
    for (std::size_t l = 0; l < t["links"].size(); ++l)
        rows.push_back({t["links"][l].get<std::string>(), f4(tso["grad_q"][l]), f4(tso["a_q"][l]), f4(tso["dq_l"][l])});
    table(o, {"Link", "dVSM/dQg (MW/MVAr)", "a^Q", "dQg (MVAr)"}, rows);

    o << "### Iterations\n\n";
    rows.clear();
    for (const auto& r : its)
        rows.push_back({std::to_string(r["iteration"].get<int>()), f3(r["vsm_before_mw"]), f3(r["vsm_predicted_mw"]),
                        f3(r["vsm_verified_mw"]), f4(r["requested_mvar"]), std::to_string(r["active_controls"].get<int>()),
                        r["target_reachable"].get<bool>() ? "yes" : "no"});
    table(o, {"Iteration", "VSM before", "Predicted", "Verified", "Requested MVAr", "Active controls", "Reachable"}, rows);

    o << "### Distribution redispatch\n\n";
    rows.clear();
    for (const auto& r : its)
        for (const auto& f : r["feeders"]) {
            int moved = 0;
            for (const auto& d : f["ders"]) {
                double s = 0.0;
                for (const auto& q : d["q_phase_kvar"]) s += std::abs(q.get<double>());
                moved += s > 1e-6;
            }
            rows.push_back({std::to_string(r["iteration"].get<int>()), f["feeder"].get<std::string>(),
                            std::to_string(f["tx_bus"].get<int>()), f4(f["requested_mvar"]), f4(f["realized_mvar"]),
                            f4(f["shortfall_mvar"]), std::to_string(moved) + "/" + std::to_string(f["ders"].size())});
        }
    table(o, {"Iteration", "Feeder", "Bus", "Requested MVAr", "Realized MVAr", "Shortfall MVAr", "DERs dispatched"}, rows);
}

}  // namespace

std::string render_report(const std::vector<std::string>& trace_json)
{
    std::vector<ojson> traces;
    for (const auto& s : trace_json) {
        try {
            traces.push_back(ojson::parse(s));
        } catch (const nlohmann::json::exception& e) {
            throw CaseError(fmt::format("trace is not valid JSON: {}", e.what()));
        }
    }
    std::ostringstream o;
    o << "# TSO-DSO coordination report\n\n";
    if (traces.size() > 1) {
        o << "## Comparison\n\n";
        std::vector<std::string> head{"Metric"};
        std::vector<std::vector<std::string>> rows(6);
        rows[0] = {"Requested MVAr"};
        rows[1] = {"No. of iterations"};
        rows[2] = {"Controllers used"};
        rows[3] = {"VSM after first iteration (MW)"};
        rows[4] = {"Final VSM (MW)"};
        rows[5] = {"Converged"};
        for (const auto& t : traces) {
            head.push_back(t["weights"].get<std::string>());
            rows[0].push_back(f4(t["total_requested_mvar"]));
            rows[1].push_back(std::to_string(t["iteration_count"].get<int>()));
            rows[2].push_back(std::to_string(t["controllers_used"].get<int>()));
            rows[3].push_back(f3(first_verified(t)));
            rows[4].push_back(f3(t["vsm_final_mw"]));
            rows[5].push_back(t["converged"].get<bool>() ? "yes" : "no");
        }
        table(o, head, rows);
    }
    for (const auto& t : traces) one_trace(o, t);
    return o.str();
}

}  // namespace tdvsm
