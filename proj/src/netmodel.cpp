#include "tdvsm/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "tdvsm/errors.hpp"

namespace tdvsm {

using nlohmann::json;

ReactiveLimits reactive_limits(const CapabilityCurve& curve, double p)
{
    struct Visitor {
        double p;
        ReactiveLimits operator()(const BoxCapability& b) const { return {b.q_min, b.q_max}; }
        ReactiveLimits operator()(const CircleCapability& c) const
        {
            const double q = std::sqrt(std::max(0.0, c.s_rating * c.s_rating - p * p));
            return {-q, q};
        }
        ReactiveLimits operator()(const IbrCapability& c) const
        {
            return {-c.fraction * c.icr, c.fraction * c.icr};
        }
    };
    return std::visit(Visitor{p}, curve);
}

ReactiveLimits ibr_q_limits(const IbrUnit& unit) { return reactive_limits(unit.capability(), unit.p_out); }

ReactiveLimits der_q_limits(const DerUnit& unit) { return reactive_limits(unit.capability(), unit.p_gen); }

void DerUnit::set_p(double p)
{
    p_gen = p;
    const auto lim = der_q_limits(*this);
    q_min = lim.q_min;
    q_max = lim.q_max;
}

PhaseImpedance DxEdge::phase_impedance() const
{
    if (z_phase) return *z_phase;
    PhaseImpedance z{};
    const std::complex<double> zs(r, x);
    z[0] = z[4] = z[8] = zs;
    return z;
}

// ---------------------------------------------------------------------------

int TransmissionNetwork::bus_index(int id) const
{
    for (std::size_t i = 0; i < buses.size(); ++i)
        if (buses[i].id == id) return static_cast<int>(i);
    throw CaseError(fmt::format("unknown bus id {}", id));
}

int TransmissionNetwork::branch_index(int id) const
{
    for (std::size_t i = 0; i < branches.size(); ++i)
        if (branches[i].id == id) return static_cast<int>(i);
    throw CaseError(fmt::format("unknown branch id {}", id));
}

void TransmissionNetwork::validate() const
{
    if (buses.empty()) throw CaseError("transmission network has no buses");
    if (!(base_mva > 0)) throw CaseError("base_mva must be positive");
    std::set<int> ids;
    int slacks = 0;
    for (const auto& b : buses) {
        if (!ids.insert(b.id).second) throw CaseError(fmt::format("bus {}: duplicate id", b.id));
        if (!(b.v_min > 0 && b.v_min < b.v_max))
            throw CaseError(fmt::format("bus {}: requires 0 < v_min < v_max", b.id));
        if (b.kind == BusKind::slack) ++slacks;
    }
    if (slacks != 1) throw CaseError(fmt::format("expected exactly one slack bus, found {}", slacks));
    if (buses[bus_index(slack_bus)].kind != BusKind::slack)
        throw CaseError(fmt::format("slack_bus {} is not of kind slack", slack_bus));

    std::set<int> branch_ids;
    for (const auto& br : branches) {
        if (!branch_ids.insert(br.id).second) throw CaseError(fmt::format("branch {}: duplicate id", br.id));
        if (!ids.count(br.from) || !ids.count(br.to))
            throw CaseError(fmt::format("branch {}: endpoint does not exist", br.id));
        if (br.from == br.to) throw CaseError(fmt::format("branch {}: self loop", br.id));
        if (br.x == 0.0) throw CaseError(fmt::format("branch {}: reactance must be non-zero", br.id));
    }

    std::set<int> unit_buses;
    auto claim = [&](int bus, const char* what) {
        if (!ids.count(bus)) throw CaseError(fmt::format("{} at unknown bus {}", what, bus));
        if (!unit_buses.insert(bus).second)
            throw CaseError(fmt::format("{} at bus {}: at most one generating unit per bus", what, bus));
        if (buses[bus_index(bus)].kind == BusKind::pq)
            throw CaseError(fmt::format("{} at bus {}: bus must be slack or pv", what, bus));
    };
    for (const auto& g : generators) {
        claim(g.bus, "generator");
        if (g.q_min > g.q_max) throw CaseError(fmt::format("generator at bus {}: q_min > q_max", g.bus));
        if (g.p_out < 0 || g.p_out > g.p_max)
            throw CaseError(fmt::format("generator at bus {}: requires 0 <= p <= p_max", g.bus));
    }
    for (const auto& u : ibrs) {
        claim(u.bus, "ibr");
        if (u.icr < 0 || u.p_out > u.icr) throw CaseError(fmt::format("ibr at bus {}: requires p <= icr", u.bus));
    }
    if (!unit_buses.count(slack_bus)) throw CaseError("slack bus has no generating unit");
    for (const auto& b : buses)
        if (b.kind == BusKind::pv && !unit_buses.count(b.id))
            throw CaseError(fmt::format("bus {}: pv bus without a generating unit", b.id));

    for (const auto& l : boundary_links) {
        if (!ids.count(l.tx_bus)) throw CaseError(fmt::format("boundary link to unknown bus {}", l.tx_bus));
        if (l.beta < 1) throw CaseError(fmt::format("boundary link at bus {}: beta must be >= 1", l.tx_bus));
    }
    if (!is_connected(*this)) throw CaseError("transmission network is not connected");
}

std::vector<GenSite> gen_sites(const TransmissionNetwork& net)
{
    std::vector<GenSite> out;
    out.reserve(net.generators.size() + net.ibrs.size());
    for (std::size_t i = 0; i < net.generators.size(); ++i) {
        const auto& g = net.generators[i];
        out.push_back({net.bus_index(g.bus), false, static_cast<int>(i), g.p_out, g.v_set, g.q_min, g.q_max, g.p_max});
    }
    for (std::size_t i = 0; i < net.ibrs.size(); ++i) {
        const auto& u = net.ibrs[i];
        const auto lim = ibr_q_limits(u);
        out.push_back({net.bus_index(u.bus), true, static_cast<int>(i), u.p_out, u.v_set, lim.q_min, lim.q_max, u.icr});
    }
    return out;
}

std::vector<std::string> StateLayout::names() const
{
    std::vector<std::string> n;
    for (std::size_t i = 0; i < units(); ++i) n.push_back(fmt::format("Pg_{}", i + 1));
    for (std::size_t i = 0; i < units(); ++i) n.push_back(fmt::format("Vg_{}", i + 1));
    for (std::size_t j = 0; j < loads(); ++j) n.push_back(fmt::format("PL_{}", j + 1));
    for (std::size_t j = 0; j < loads(); ++j) n.push_back(fmt::format("QL_{}", j + 1));
    return n;
}

StateLayout state_layout(const TransmissionNetwork& net)
{
    StateLayout s;
    for (const auto& g : gen_sites(net)) s.unit_bus.push_back(g.bus_index);
    std::vector<bool> loaded(net.buses.size(), false);
    for (std::size_t i = 0; i < net.buses.size(); ++i)
        loaded[i] = net.buses[i].load_p != 0.0 || net.buses[i].load_q != 0.0;
    for (const auto& l : net.boundary_links) loaded[net.bus_index(l.tx_bus)] = true;
    for (std::size_t i = 0; i < loaded.size(); ++i)
        if (loaded[i]) s.load_buses.push_back(static_cast<int>(i));
    return s;
}

// ---------------------------------------------------------------------------

void FeederModel::finalize()
{
    const auto n = nodes.size();
    if (n == 0) throw CaseError(fmt::format("feeder {}: no nodes", id));
    if (!(base_kva > 0)) throw CaseError(fmt::format("feeder {}: base_kva must be positive", id));
    if (!(tap_min > 0 && tap_min <= tap_max) || tap_steps < 1)
        throw CaseError(fmt::format("feeder {}: invalid tap range", id));
    std::map<int, int> ix;
    for (std::size_t i = 0; i < n; ++i)
        if (!ix.emplace(nodes[i].id, static_cast<int>(i)).second)
            throw CaseError(fmt::format("feeder {}: duplicate node id {}", id, nodes[i].id));
    for (const auto& nd : nodes)
        if (!(nd.v_min > 0 && nd.v_min < nd.v_max))
            throw CaseError(fmt::format("feeder {} node {}: requires 0 < v_min < v_max", id, nd.id));

    if (edges.size() != n - 1) throw CaseError(fmt::format("feeder {}: not radial (|edges| != |nodes| - 1)", id));
    parent.assign(n, -1);
    parent_edge.assign(n, -1);
    children.assign(n, {});
    for (std::size_t e = 0; e < edges.size(); ++e) {
        auto& ed = edges[e];
        auto f = ix.find(ed.from), t = ix.find(ed.to);
        if (f == ix.end() || t == ix.end())
            throw CaseError(fmt::format("feeder {} edge {}->{}: unknown node", id, ed.from, ed.to));
        ed.from_ix = f->second;
        ed.to_ix = t->second;
        if (ed.to_ix == 0 || parent[ed.to_ix] != -1)
            throw CaseError(fmt::format("feeder {}: not radial (node {} has two parents)", id, ed.to));
        parent[ed.to_ix] = ed.from_ix;
        parent_edge[ed.to_ix] = static_cast<int>(e);
        children[ed.from_ix].push_back(ed.to_ix);
    }
    order.clear();
    std::vector<bool> seen(n, false);
    std::queue<int> q;
    q.push(0);
    seen[0] = true;
    while (!q.empty()) {
        const int j = q.front();
        q.pop();
        order.push_back(j);
        for (int c : children[j])
            if (!seen[c]) {
                seen[c] = true;
                q.push(c);
            }
    }
    if (order.size() != n) throw CaseError(fmt::format("feeder {}: not radial (unreachable nodes)", id));

    for (auto& d : ders) {
        auto it = ix.find(d.node);
        if (it == ix.end()) throw CaseError(fmt::format("feeder {}: DER at unknown node {}", id, d.node));
        d.node_ix = it->second;
        if (std::abs(d.p_gen) > d.s_rating)
            throw CaseError(fmt::format("feeder {}: DER at node {} requires |p| <= s", id, d.node));
        const auto lim = der_q_limits(d);
        d.q_min = lim.q_min;
        d.q_max = lim.q_max;
    }
}

int FeederModel::node_index(int nid) const
{
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].id == nid) return static_cast<int>(i);
    throw CaseError(fmt::format("feeder {}: unknown node {}", id, nid));
}

double FeederModel::total_load_p() const
{
    double s = 0;
    for (const auto& n : nodes) s += n.load_p[0] + n.load_p[1] + n.load_p[2];
    return s;
}

double FeederModel::total_load_q() const
{
    double s = 0;
    for (const auto& n : nodes) s += n.load_q[0] + n.load_q[1] + n.load_q[2];
    return s;
}

FeederModel FeederModel::scaled(double p_mult, double q_mult) const
{
    FeederModel f = *this;
    for (auto& n : f.nodes)
        for (int ph = 0; ph < 3; ++ph) {
            n.load_p[ph] *= p_mult;
            n.load_q[ph] *= q_mult;
        }
    return f;
}

int Case::feeder_index(std::string_view fid) const
{
    for (std::size_t i = 0; i < feeders.size(); ++i)
        if (feeders[i].id == fid) return static_cast<int>(i);
    throw CaseError(fmt::format("unknown feeder '{}'", fid));
}

const FeederModel& Case::link_feeder(std::size_t link) const
{
    return feeders[feeder_index(network.boundary_links.at(link).feeder)];
}

void Case::validate() const
{
    network.validate();
    std::set<std::string> ids;
    for (const auto& f : feeders)
        if (!ids.insert(f.id).second) throw CaseError(fmt::format("duplicate feeder id '{}'", f.id));
    for (const auto& l : network.boundary_links) (void)feeder_index(l.feeder);
}

// ---------------------------------------------------------------------------
// Case document I/O

namespace {

struct Ctx {
    std::string path;
    Ctx at(std::string_view key) const { return {path.empty() ? std::string(key) : path + "." + std::string(key)}; }
    Ctx at(std::size_t i) const { return {path + "[" + std::to_string(i) + "]"}; }
    [[noreturn]] void fail(std::string_view msg) const { throw CaseError(fmt::format("{}: {}", path, msg)); }
};

void check_keys(const json& j, const Ctx& ctx, std::initializer_list<std::string_view> allowed)
{
    if (!j.is_object()) ctx.fail("expected an object");
    for (const auto& [k, v] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            ctx.fail(fmt::format("unknown field '{}'", k));
    }
}

const json& need(const json& j, const Ctx& ctx, std::string_view key)
{
    auto it = j.find(key);
    if (it == j.end()) ctx.fail(fmt::format("missing field '{}'", key));
    return *it;
}

double num(const json& j, const Ctx& ctx, std::string_view key)
{
    const auto& v = need(j, ctx, key);
    if (!v.is_number()) ctx.at(key).fail("expected a number");
    return v.get<double>();
}

double num_or(const json& j, const Ctx& ctx, std::string_view key, double dflt)
{
    return j.contains(key) ? num(j, ctx, key) : dflt;
}

int integer(const json& j, const Ctx& ctx, std::string_view key)
{
    const auto& v = need(j, ctx, key);
    if (!v.is_number_integer()) ctx.at(key).fail("expected an integer");
    return v.get<int>();
}

std::string str(const json& j, const Ctx& ctx, std::string_view key)
{
    const auto& v = need(j, ctx, key);
    if (!v.is_string()) ctx.at(key).fail("expected a string");
    return v.get<std::string>();
}

const json& arr(const json& j, const Ctx& ctx, std::string_view key)
{
    const auto& v = need(j, ctx, key);
    if (!v.is_array()) ctx.at(key).fail("expected an array");
    return v;
}

std::array<double, 3> triple(const json& j, const Ctx& ctx, std::string_view key)
{
    const auto& v = arr(j, ctx, key);
    if (v.size() != 3) ctx.at(key).fail("expected 3 phase values");
    std::array<double, 3> out{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!v[i].is_number()) ctx.at(key).at(i).fail("expected a number");
        out[i] = v[i].get<double>();
    }
    return out;
}

BusKind parse_kind(const std::string& s, const Ctx& ctx)
{
    if (s == "slack") return BusKind::slack;
    if (s == "pv") return BusKind::pv;
    if (s == "pq") return BusKind::pq;
    ctx.fail(fmt::format("unknown bus kind '{}'", s));
}

const char* kind_name(BusKind k)
{
    switch (k) {
    case BusKind::slack: return "slack";
    case BusKind::pv: return "pv";
    case BusKind::pq: return "pq";
    }
    return "pq";
}

FeederModel parse_feeder(const json& j, const Ctx& ctx)
{
    check_keys(j, ctx, {"id", "base_kva", "base_kv", "tap_min", "tap_max", "tap_steps", "nodes", "edges", "ders"});
    FeederModel f;
    f.id = str(j, ctx, "id");
    f.base_kva = num(j, ctx, "base_kva");
    f.base_kv = num(j, ctx, "base_kv");
    f.tap_min = num_or(j, ctx, "tap_min", 0.9);
    f.tap_max = num_or(j, ctx, "tap_max", 1.1);
    f.tap_steps = j.contains("tap_steps") ? integer(j, ctx, "tap_steps") : 32;
    const auto& nodes = arr(j, ctx, "nodes");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto c = ctx.at("nodes").at(i);
        check_keys(nodes[i], c, {"id", "p", "q", "v_min", "v_max"});
        DxNode n;
        n.id = integer(nodes[i], c, "id");
        n.load_p = triple(nodes[i], c, "p");
        n.load_q = triple(nodes[i], c, "q");
        n.v_min = num_or(nodes[i], c, "v_min", 0.95);
        n.v_max = num_or(nodes[i], c, "v_max", 1.05);
        f.nodes.push_back(n);
    }
    const auto& edges = arr(j, ctx, "edges");
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const auto c = ctx.at("edges").at(i);
        check_keys(edges[i], c, {"from", "to", "r", "x", "z_phase"});
        DxEdge e;
        e.from = integer(edges[i], c, "from");
        e.to = integer(edges[i], c, "to");
        e.r = num(edges[i], c, "r");
        e.x = num(edges[i], c, "x");
        if (edges[i].contains("z_phase")) {
            const auto& z = arr(edges[i], c, "z_phase");
            if (z.size() != 9) c.at("z_phase").fail("expected 9 complex entries (3x3 row-major)");
            PhaseImpedance zp{};
            for (std::size_t k = 0; k < 9; ++k) {
                if (!z[k].is_array() || z[k].size() != 2 || !z[k][0].is_number() || !z[k][1].is_number())
                    c.at("z_phase").at(k).fail("expected [re, im]");
                zp[k] = {z[k][0].get<double>(), z[k][1].get<double>()};
            }
            e.z_phase = zp;
        }
        f.edges.push_back(e);
    }
    if (j.contains("ders")) {
        const auto& ders = arr(j, ctx, "ders");
        for (std::size_t i = 0; i < ders.size(); ++i) {
            const auto c = ctx.at("ders").at(i);
            check_keys(ders[i], c, {"node", "p", "s"});
            DerUnit d;
            d.node = integer(ders[i], c, "node");
            d.p_gen = num(ders[i], c, "p");
            d.s_rating = num(ders[i], c, "s");
            f.ders.push_back(d);
        }
    }
    f.finalize();
    return f;
}

}  // namespace

Case parse_case(std::string_view text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // report line/column instead of a raw byte offset
        const auto upto = text.substr(0, std::min<std::size_t>(e.byte, text.size()));
        const auto line = 1 + std::count(upto.begin(), upto.end(), '\n');
        const auto nl = upto.rfind('\n');
        const auto col = nl == std::string_view::npos ? upto.size() : upto.size() - nl - 1;
        throw CaseError(fmt::format("case parse error at line {}, column {}: {}", line, col, e.what()));
    }
    const Ctx root;
    check_keys(doc, {"<case>"}, {"base_mva", "slack_bus", "transmission", "feeders", "boundary"});

    Case c;
    auto& net = c.network;
    net.base_mva = num_or(doc, {"<case>"}, "base_mva", 100.0);
    net.slack_bus = integer(doc, {"<case>"}, "slack_bus");

    const Ctx tx{"transmission"};
    const auto& t = need(doc, {"<case>"}, "transmission");
    check_keys(t, tx, {"buses", "branches", "generators", "ibrs"});
    const auto& buses = arr(t, tx, "buses");
    for (std::size_t i = 0; i < buses.size(); ++i) {
        const auto ctx = tx.at("buses").at(i);
        check_keys(buses[i], ctx, {"id", "kind", "v_min", "v_max", "load_p", "load_q"});
        TxBus b;
        b.id = integer(buses[i], ctx, "id");
        b.kind = parse_kind(str(buses[i], ctx, "kind"), ctx.at("kind"));
        b.v_min = num_or(buses[i], ctx, "v_min", 0.95);
        b.v_max = num_or(buses[i], ctx, "v_max", 1.05);
        b.load_p = num_or(buses[i], ctx, "load_p", 0.0);
        b.load_q = num_or(buses[i], ctx, "load_q", 0.0);
        net.buses.push_back(b);
    }
    const auto& branches = arr(t, tx, "branches");
    for (std::size_t i = 0; i < branches.size(); ++i) {
        const auto ctx = tx.at("branches").at(i);
        check_keys(branches[i], ctx, {"id", "from", "to", "r", "x", "b", "in_service"});
        TxBranch br;
        br.id = branches[i].contains("id") ? integer(branches[i], ctx, "id") : static_cast<int>(i + 1);
        br.from = integer(branches[i], ctx, "from");
        br.to = integer(branches[i], ctx, "to");
        br.r = num(branches[i], ctx, "r");
        br.x = num(branches[i], ctx, "x");
        br.b_shunt = num_or(branches[i], ctx, "b", 0.0);
        if (branches[i].contains("in_service")) {
            if (!branches[i]["in_service"].is_boolean()) ctx.at("in_service").fail("expected a boolean");
            br.in_service = branches[i]["in_service"].get<bool>();
        }
        net.branches.push_back(br);
    }
    const auto& gens = arr(t, tx, "generators");
    for (std::size_t i = 0; i < gens.size(); ++i) {
        const auto ctx = tx.at("generators").at(i);
        check_keys(gens[i], ctx, {"bus", "p", "v_set", "q_min", "q_max", "p_max"});
        GenUnit g;
        g.bus = integer(gens[i], ctx, "bus");
        g.p_out = num(gens[i], ctx, "p");
        g.v_set = num(gens[i], ctx, "v_set");
        g.q_min = num(gens[i], ctx, "q_min");
        g.q_max = num(gens[i], ctx, "q_max");
        g.p_max = num(gens[i], ctx, "p_max");
        net.generators.push_back(g);
    }
    if (t.contains("ibrs")) {
        const auto& ibrs = arr(t, tx, "ibrs");
        for (std::size_t i = 0; i < ibrs.size(); ++i) {
            const auto ctx = tx.at("ibrs").at(i);
            check_keys(ibrs[i], ctx, {"bus", "p", "icr", "kind", "v_set"});
            IbrUnit u;
            u.bus = integer(ibrs[i], ctx, "bus");
            u.p_out = num(ibrs[i], ctx, "p");
            u.icr = num(ibrs[i], ctx, "icr");
            const auto kind = str(ibrs[i], ctx, "kind");
            if (kind == "wind")
                u.kind = IbrKind::wind;
            else if (kind == "solar")
                u.kind = IbrKind::solar;
            else
                ctx.at("kind").fail(fmt::format("unknown ibr kind '{}'", kind));
            u.v_set = num_or(ibrs[i], ctx, "v_set", 1.0);
            net.ibrs.push_back(u);
        }
    }

    if (doc.contains("feeders")) {
        const auto& feeders = arr(doc, {"<case>"}, "feeders");
        for (std::size_t i = 0; i < feeders.size(); ++i) c.feeders.push_back(parse_feeder(feeders[i], Ctx{"feeders"}.at(i)));
    }
    if (doc.contains("boundary")) {
        const auto& links = arr(doc, {"<case>"}, "boundary");
        for (std::size_t i = 0; i < links.size(); ++i) {
            const auto ctx = Ctx{"boundary"}.at(i);
            check_keys(links[i], ctx, {"tx_bus", "feeder", "beta", "kv_tx", "kv_dx"});
            BoundaryLink l;
            l.tx_bus = integer(links[i], ctx, "tx_bus");
            l.feeder = str(links[i], ctx, "feeder");
            l.beta = integer(links[i], ctx, "beta");
            l.kv_tx = num_or(links[i], ctx, "kv_tx", 0.0);
            l.kv_dx = num_or(links[i], ctx, "kv_dx", 0.0);
            net.boundary_links.push_back(l);
        }
    }
    c.validate();
    return c;
}

Case load_case(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw CaseError(fmt::format("cannot open case file '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_case(ss.str());
    } catch (const CaseError& e) {
        throw CaseError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string serialize_case(const Case& c)
{
    const auto& net = c.network;
    json doc;
    doc["base_mva"] = net.base_mva;
    doc["slack_bus"] = net.slack_bus;
    json buses = json::array();
    for (const auto& b : net.buses)
        buses.push_back({{"id", b.id}, {"kind", kind_name(b.kind)}, {"v_min", b.v_min}, {"v_max", b.v_max},
                         {"load_p", b.load_p}, {"load_q", b.load_q}});
    json branches = json::array();
    for (const auto& br : net.branches)
        branches.push_back({{"id", br.id}, {"from", br.from}, {"to", br.to}, {"r", br.r}, {"x", br.x},
                            {"b", br.b_shunt}, {"in_service", br.in_service}});
    json gens = json::array();
    for (const auto& g : net.generators)
        gens.push_back({{"bus", g.bus}, {"p", g.p_out}, {"v_set", g.v_set}, {"q_min", g.q_min}, {"q_max", g.q_max},
                        {"p_max", g.p_max}});
    json ibrs = json::array();
    for (const auto& u : net.ibrs)
        ibrs.push_back({{"bus", u.bus}, {"p", u.p_out}, {"icr", u.icr},
                        {"kind", u.kind == IbrKind::wind ? "wind" : "solar"}, {"v_set", u.v_set}});
    doc["transmission"] = {{"buses", buses}, {"branches", branches}, {"generators", gens}, {"ibrs", ibrs}};

    json feeders = json::array();
    for (const auto& f : c.feeders) {
        json nodes = json::array(), edges = json::array(), ders = json::array();
        for (const auto& n : f.nodes)
            nodes.push_back({{"id", n.id}, {"p", n.load_p}, {"q", n.load_q}, {"v_min", n.v_min}, {"v_max", n.v_max}});
        for (const auto& e : f.edges) {
            json je = {{"from", e.from}, {"to", e.to}, {"r", e.r}, {"x", e.x}};
            if (e.z_phase) {
                json z = json::array();
                for (const auto& v : *e.z_phase) z.push_back({v.real(), v.imag()});
                je["z_phase"] = z;
            }
            edges.push_back(je);
        }
        for (const auto& d : f.ders) ders.push_back({{"node", d.node}, {"p", d.p_gen}, {"s", d.s_rating}});
        feeders.push_back({{"id", f.id}, {"base_kva", f.base_kva}, {"base_kv", f.base_kv}, {"tap_min", f.tap_min},
                           {"tap_max", f.tap_max}, {"tap_steps", f.tap_steps}, {"nodes", nodes}, {"edges", edges},
                           {"ders", ders}});
    }
    doc["feeders"] = feeders;
    json links = json::array();
    for (const auto& l : net.boundary_links)
        links.push_back({{"tx_bus", l.tx_bus}, {"feeder", l.feeder}, {"beta", l.beta}, {"kv_tx", l.kv_tx},
                         {"kv_dx", l.kv_dx}});
    doc["boundary"] = links;
    return doc.dump(1);
}

void save_case(const Case& c, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw CaseError(fmt::format("cannot write case file '{}'", path.string()));
    out << serialize_case(c) << '\n';
}

// ---------------------------------------------------------------------------

std::string Contingency::id() const
{
    return kind == Kind::none ? std::string("none") : fmt::format("br{}", branch);
}

Contingency Contingency::parse(std::string_view s)
{
    if (s == "none") return none();
    if (s.size() > 2 && s.substr(0, 2) == "br") {
        try {
            return outage(std::stoi(std::string(s.substr(2))));
        } catch (const std::exception&) {
        }
    }
    throw CaseError(fmt::format("malformed contingency id '{}'", s));
}

bool is_connected(const TransmissionNetwork& net)
{
    const auto n = net.buses.size();
    if (n == 0) return true;
    std::vector<std::vector<int>> adj(n);
    for (const auto& br : net.branches) {
        if (!br.in_service) continue;
        const int a = net.bus_index(br.from), b = net.bus_index(br.to);
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    std::vector<bool> seen(n, false);
    std::vector<int> stack{0};
    seen[0] = true;
    std::size_t count = 1;
    while (!stack.empty()) {
        const int v = stack.back();
        stack.pop_back();
        for (int w : adj[v])
            if (!seen[w]) {
                seen[w] = true;
                ++count;
                stack.push_back(w);
            }
    }
    return count == n;
}

TransmissionNetwork apply_contingency(const TransmissionNetwork& net, const Contingency& c)
{
    if (c.kind == Contingency::Kind::none) return net;
    TransmissionNetwork out = net;
    auto& br = out.branches[out.branch_index(c.branch)];
    if (!br.in_service) throw CaseError(fmt::format("contingency {}: branch already out of service", c.id()));
    br.in_service = false;
    if (!is_connected(out)) throw IslandingError(fmt::format("contingency {} islands the network", c.id()));
    return out;
}

std::vector<Contingency> n1_contingencies(const TransmissionNetwork& net)
{
    std::vector<Contingency> out;
    for (const auto& br : net.branches)
        if (br.in_service) out.push_back(Contingency::outage(br.id));
    return out;
}

}  // namespace tdvsm
