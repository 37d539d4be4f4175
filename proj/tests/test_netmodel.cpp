#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "tdvsm/errors.hpp"
#include "tdvsm/netmodel.hpp"

using namespace tdvsm;

namespace {

std::string data(const char* name) { return std::string(TDVSM_DATA_DIR) + "/" + name; }

// independent connectivity oracle: union-find over in-service branches
bool connected_uf(const TransmissionNetwork& net)
{
    std::vector<int> parent(net.buses.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); };
    for (const auto& br : net.branches)
        if (br.in_service) parent[find(net.bus_index(br.from))] = find(net.bus_index(br.to));
    int roots = 0;
    for (std::size_t i = 0; i < parent.size(); ++i) roots += find(static_cast<int>(i)) == static_cast<int>(i);
    return roots == 1;
}

const char* kMinimal = R"({
  "slack_bus": 1,
  "transmission": {
    "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "pq", "load_p": 10}],
    "branches": [{"id": 1, "from": 1, "to": 2, "r": 0.01, "x": 0.1}],
    "generators": [{"bus": 1, "p": 0, "v_set": 1.0, "q_min": -10, "q_max": 10, "p_max": 100}]
  },
  "feeders": [FEEDER],
  "boundary": []
})";

std::string with_feeder(const std::string& feeder)
{
    std::string s = kMinimal;
    s.replace(s.find("FEEDER"), 6, feeder);
    return s;
}

}  // namespace

TEST(NetModel, LoadsBundledIeee30Case)
{
    const auto c = load_case(data("ieee30_37.case"));
    EXPECT_EQ(c.network.buses.size(), 30u);
    EXPECT_EQ(c.network.generators.size(), 6u);
    ASSERT_EQ(c.network.ibrs.size(), 3u);
    EXPECT_EQ(c.network.ibrs[0].bus, 6);
    EXPECT_EQ(c.network.ibrs[1].bus, 9);
    EXPECT_EQ(c.network.ibrs[2].bus, 22);
    EXPECT_EQ(c.network.boundary_links.size(), 20u);
    EXPECT_EQ(c.feeders.size(), 20u);
    EXPECT_EQ(c.feeders[0].nodes.size(), 37u);
}

TEST(NetModel, LoadsTwoBusCase)
{
    const auto c = load_case(data("two_bus.case"));
    ASSERT_EQ(c.network.buses.size(), 2u);
    EXPECT_EQ(c.network.branches.size(), 1u);
    EXPECT_EQ(c.network.buses[0].kind, BusKind::slack);
    EXPECT_EQ(c.network.buses[1].kind, BusKind::pq);
}

TEST(NetModel, FeederWithCycleIsRejected)
{
    const std::string feeder = R"({"id": "f", "base_kva": 1000, "base_kv": 4.16,
      "nodes": [{"id": 0, "p": [0,0,0], "q": [0,0,0]}, {"id": 1, "p": [1,1,1], "q": [0,0,0]},
                {"id": 2, "p": [1,1,1], "q": [0,0,0]}],
      "edges": [{"from": 1, "to": 2, "r": 0.01, "x": 0.02}, {"from": 2, "to": 1, "r": 0.01, "x": 0.02}]})";
    try {
        parse_case(with_feeder(feeder));
        FAIL() << "expected CaseError";
    } catch (const CaseError& e) {
        EXPECT_NE(std::string(e.what()).find("not radial"), std::string::npos) << e.what();
    }
}

TEST(NetModel, UnknownFieldsAndParseErrorsCarryContext)
{
    const std::string feeder = R"({"id": "f", "base_kva": 1000, "base_kv": 4.16, "colour": "red",
      "nodes": [{"id": 0, "p": [0,0,0], "q": [0,0,0]}], "edges": []})";
    try {
        parse_case(with_feeder(feeder));
        FAIL();
    } catch (const CaseError& e) {
        EXPECT_NE(std::string(e.what()).find("feeders[0]: unknown field 'colour'"), std::string::npos) << e.what();
    }
    try {
        parse_case("{\n  \"slack_bus\": 1,\n  oops\n}");
        FAIL();
    } catch (const CaseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(NetModel, InvariantViolationNamesEntity)
{
    std::string s = with_feeder(R"({"id": "f", "base_kva": 1000, "base_kv": 4.16,
      "nodes": [{"id": 0, "p": [0,0,0], "q": [0,0,0]}], "edges": []})");
    s.replace(s.find("\"x\": 0.1"), 8, "\"x\": 0.0");
    EXPECT_THROW(
        {
            try {
                parse_case(s);
            } catch (const CaseError& e) {
                EXPECT_NE(std::string(e.what()).find("branch 1"), std::string::npos);
                throw;
            }
        },
        CaseError);
}

TEST(NetModel, SerializationRoundTripsStructurally)
{
    for (const char* name : {"two_bus.case", "five_bus.case", "ieee30_37.case"}) {
        const auto c = load_case(data(name));
        const auto text = serialize_case(c);
        const auto back = parse_case(text);
        EXPECT_EQ(serialize_case(back), text) << name;
        ASSERT_EQ(back.feeders.size(), c.feeders.size());
        for (std::size_t f = 0; f < c.feeders.size(); ++f) {
            EXPECT_EQ(back.feeders[f].parent, c.feeders[f].parent);
            ASSERT_EQ(back.feeders[f].ders.size(), c.feeders[f].ders.size());
            for (std::size_t k = 0; k < c.feeders[f].ders.size(); ++k)
                EXPECT_EQ(back.feeders[f].ders[k].q_max, c.feeders[f].ders[k].q_max);
        }
    }
}

TEST(NetModel, ChildSetsPartitionTheEdges)
{
    const auto c = load_case(data("ieee30_37.case"));
    for (const auto& f : c.feeders) {
        std::size_t total = 0;
        for (const auto& ch : f.children) total += ch.size();
        EXPECT_EQ(total, f.edges.size());
    }
}

TEST(NetModel, ContingencyNoneIsIdentity)
{
    const auto c = load_case(data("five_bus.case"));
    const auto out = apply_contingency(c.network, Contingency::none());
    for (std::size_t i = 0; i < out.branches.size(); ++i)
        EXPECT_EQ(out.branches[i].in_service, c.network.branches[i].in_service);
}

TEST(NetModel, SpurOutageIslands)
{
    const auto c = load_case(data("five_bus.case"));
    // branch 6 is the only path to bus 5
    EXPECT_THROW(apply_contingency(c.network, Contingency::outage(6)), IslandingError);
}

TEST(NetModel, ParallelPathOutageStaysConnected)
{
    const auto c = load_case(data("five_bus.case"));
    const auto before = c.network;
    const auto out = apply_contingency(c.network, Contingency::outage(2));
    int in_service = 0;
    for (const auto& br : out.branches) in_service += br.in_service;
    EXPECT_EQ(in_service, static_cast<int>(c.network.branches.size()) - 1);
    EXPECT_TRUE(connected_uf(out));
    // input untouched
    for (std::size_t i = 0; i < before.branches.size(); ++i) EXPECT_TRUE(c.network.branches[i].in_service);
}

TEST(NetModel, ConnectivityAgreesWithUnionFind)
{
    const auto c = load_case(data("ieee30_37.case"));
    for (const auto& con : n1_contingencies(c.network)) {
        auto net = c.network;
        net.branches[net.branch_index(con.branch)].in_service = false;
        EXPECT_EQ(is_connected(net), connected_uf(net)) << con.id();
    }
}

TEST(NetModel, ContingencyIdsRoundTrip)
{
    EXPECT_EQ(Contingency::parse("none").kind, Contingency::Kind::none);
    EXPECT_EQ(Contingency::parse("br12").branch, 12);
    EXPECT_EQ(Contingency::outage(7).id(), "br7");
    EXPECT_THROW(Contingency::parse("bx"), CaseError);
}

TEST(Capability, IbrFraction)
{
    IbrUnit u;
    u.icr = 100;
    EXPECT_NEAR(ibr_q_limits(u).q_min, -32.87, 1e-12);
    EXPECT_NEAR(ibr_q_limits(u).q_max, 32.87, 1e-12);
    u.icr = 0;
    EXPECT_EQ(ibr_q_limits(u).q_max, 0.0);
    u.icr = 10;
    EXPECT_NEAR(ibr_q_limits(u).q_min, -3.287, 1e-12);
    EXPECT_NEAR(ibr_q_limits(u).q_max, 3.287, 1e-12);
}

TEST(Capability, DerCircle)
{
    DerUnit d;
    d.s_rating = 10;
    d.p_gen = 0;
    EXPECT_DOUBLE_EQ(der_q_limits(d).q_max, 10.0);
    EXPECT_DOUBLE_EQ(der_q_limits(d).q_min, -10.0);
    d.p_gen = 10;
    EXPECT_DOUBLE_EQ(der_q_limits(d).q_max, 0.0);
    d.p_gen = 6;
    EXPECT_DOUBLE_EQ(der_q_limits(d).q_max, 8.0);
    EXPECT_DOUBLE_EQ(der_q_limits(d).q_min, -8.0);
}

TEST(Capability, DerIntervalShrinksWithActivePower)
{
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        DerUnit d;
        d.s_rating = 1 + 100 * u(rng);
        const double p1 = d.s_rating * u(rng);
        const double p2 = p1 + (d.s_rating - p1) * u(rng);
        d.set_p(p1);
        const auto a = der_q_limits(d);
        d.set_p(p2);
        EXPECT_EQ(d.q_max, der_q_limits(d).q_max);
        EXPECT_LE(d.q_max - d.q_min, a.q_max - a.q_min + 1e-12);
        EXPECT_EQ(d.q_min, -d.q_max);
    }
}

TEST(Capability, CurveVariants)
{
    EXPECT_EQ(reactive_limits(BoxCapability{-3, 5}, 100).q_max, 5);
    EXPECT_DOUBLE_EQ(reactive_limits(CircleCapability{5}, 3).q_max, 4);
    EXPECT_DOUBLE_EQ(reactive_limits(IbrCapability{10}, 10).q_max, 3.287);
}

TEST(NetModel, StateLayoutOrdering)
{
    const auto c = load_case(data("ieee30_37.case"));
    const auto s = state_layout(c.network);
    EXPECT_EQ(s.units(), 9u);
    EXPECT_EQ(s.loads(), 21u);
    EXPECT_EQ(s.dim(), 2 * 9u + 2 * 21u);
    const auto names = s.names();
    EXPECT_EQ(names.front(), "Pg_1");
    EXPECT_EQ(names[s.vg(0)], "Vg_1");
    EXPECT_EQ(names[s.ql(20)], "QL_21");
}
