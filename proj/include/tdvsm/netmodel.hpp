#pragma once

// Data model for the coupled transmission/distribution system: buses,
// branches, generating units, radial feeders and the boundary links that
// connect them. Everything here is a plain value type; operating-point
// changes are made on copies.

#include <array>
#include <complex>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tdvsm {

/// Reactive capability of an IBR expressed as a fraction of its continuous rating.
inline constexpr double kIbrReactiveFraction = 0.3287;

struct ReactiveLimits {
    double q_min = 0.0;
    double q_max = 0.0;
};

// ---------------------------------------------------------------------------
// Capability curves

struct BoxCapability {
    double q_min = 0.0;
    double q_max = 0.0;
};

/// Apparent-power circle: |Q| <= sqrt(S^2 - P^2).
struct CircleCapability {
    double s_rating = 0.0;
};

/// Fixed +/- fraction * ICR box used for inverter-based plants.
struct IbrCapability {
    double icr = 0.0;
    double fraction = kIbrReactiveFraction;
};

using CapabilityCurve = std::variant<BoxCapability, CircleCapability, IbrCapability>;

/// Reactive limits of a device following @p curve while producing @p p.
ReactiveLimits reactive_limits(const CapabilityCurve& curve, double p);

// ---------------------------------------------------------------------------
// Transmission side

enum class BusKind { slack, pv, pq };

struct TxBus {
    int id = 0;
    BusKind kind = BusKind::pq;
    double v_min = 0.95;  // pu
    double v_max = 1.05;  // pu
    double load_p = 0.0;  // MW, fixed transmission-level load
    double load_q = 0.0;  // MVAr
};

struct TxBranch {
    int id = 0;
    int from = 0;  // bus ids
    int to = 0;
    double r = 0.0;  // pu on base_mva
    double x = 0.0;
    double b_shunt = 0.0;  // total line charging
    bool in_service = true;
};

struct GenUnit {
    int bus = 0;
    double p_out = 0.0;  // MW
    double v_set = 1.0;  // pu
    double q_min = 0.0;  // MVAr
    double q_max = 0.0;
    double p_max = 0.0;  // MW

    CapabilityCurve capability() const { return BoxCapability{q_min, q_max}; }
};

enum class IbrKind { wind, solar };

struct IbrUnit {
    int bus = 0;
    double p_out = 0.0;  // MW
    double icr = 0.0;    // MVA
    IbrKind kind = IbrKind::solar;
    double v_set = 1.0;  // IBR buses regulate voltage like PV buses

    CapabilityCurve capability() const { return IbrCapability{icr}; }
};

/// Reactive limits of an IBR in MVAr: +/- 0.3287 * ICR at every output level.
ReactiveLimits ibr_q_limits(const IbrUnit& unit);

/// Connects transmission bus @c tx_bus to @c beta identical copies of a feeder.
struct BoundaryLink {
    int tx_bus = 0;
    std::string feeder;
    int beta = 1;
    double kv_tx = 0.0;
    double kv_dx = 0.0;
};

struct TransmissionNetwork {
    double base_mva = 100.0;
    int slack_bus = 0;
    std::vector<TxBus> buses;
    std::vector<TxBranch> branches;
    std::vector<GenUnit> generators;
    std::vector<IbrUnit> ibrs;
    std::vector<BoundaryLink> boundary_links;

    /// Position of bus @p id in @c buses; throws CaseError when absent.
    int bus_index(int id) const;
    int branch_index(int id) const;
    int slack_index() const { return bus_index(slack_bus); }

    /// Checks every structural invariant; throws CaseError naming the entity.
    void validate() const;
};

/// One generating unit (synchronous machine or IBR) flattened for solvers.
struct GenSite {
    int bus_index = 0;
    bool ibr = false;
    int unit = 0;  // index into generators or ibrs
    double p = 0.0;
    double v_set = 1.0;
    double q_min = 0.0;
    double q_max = 0.0;
    double p_max = 0.0;
};

/// Synchronous generators first, then IBRs, in file order.
std::vector<GenSite> gen_sites(const TransmissionNetwork& net);

/// Ordering of the surrogate input vector [Pg.., Vg.., PL.., QL..].
struct StateLayout {
    std::vector<int> unit_bus;    // bus index per generating unit (gen_sites order)
    std::vector<int> load_buses;  // bus indices carrying load, ascending

    std::size_t units() const { return unit_bus.size(); }
    std::size_t loads() const { return load_buses.size(); }
    std::size_t dim() const { return 2 * units() + 2 * loads(); }
    std::size_t pg(std::size_t i) const { return i; }
    std::size_t vg(std::size_t i) const { return units() + i; }
    std::size_t pl(std::size_t j) const { return 2 * units() + j; }
    std::size_t ql(std::size_t j) const { return 2 * units() + loads() + j; }

    /// Column names as used in dataset headers (1-based suffixes).
    std::vector<std::string> names() const;
};

StateLayout state_layout(const TransmissionNetwork& net);

// ---------------------------------------------------------------------------
// Distribution side

struct DxNode {
    int id = 0;
    std::array<double, 3> load_p{};  // kW per phase
    std::array<double, 3> load_q{};  // kVAr per phase
    double v_min = 0.95;             // pu magnitude; squared where LinDistFlow needs it
    double v_max = 1.05;
};

using PhaseImpedance = std::array<std::complex<double>, 9>;  // 3x3 row-major, pu

struct DxEdge {
    int from = 0;  // node ids, parent -> child
    int to = 0;
    double r = 0.0;  // positive-sequence pu
    double x = 0.0;
    std::optional<PhaseImpedance> z_phase;

    int from_ix = -1;  // derived
    int to_ix = -1;

    /// Full phase impedance, falling back to diag(r + jx).
    PhaseImpedance phase_impedance() const;
};

struct DerUnit {
    int node = 0;
    double p_gen = 0.0;     // kW
    double s_rating = 0.0;  // kVA
    double q_min = 0.0;     // kVAr, derived from the circle
    double q_max = 0.0;
    std::array<double, 3> q_phase{};  // present reactive set-point per phase, kVAr

    int node_ix = -1;  // derived

    /// Changes active output and recomputes the reactive limits.
    void set_p(double p);
    double q_total() const { return q_phase[0] + q_phase[1] + q_phase[2]; }
    /// Spreads @p q equally over the three phases.
    void set_q(double q) { q_phase = {q / 3.0, q / 3.0, q / 3.0}; }

    CapabilityCurve capability() const { return CircleCapability{s_rating}; }
};

/// Reactive limits of a DER in kVAr: +/- sqrt(S^2 - P^2).
ReactiveLimits der_q_limits(const DerUnit& unit);

struct FeederModel {
    std::string id;
    double base_kva = 1000.0;  // three-phase base
    double base_kv = 1.0;
    double tap_min = 0.9;
    double tap_max = 1.1;
    int tap_steps = 32;
    std::vector<DxNode> nodes;  // nodes[0] is the substation
    std::vector<DxEdge> edges;
    std::vector<DerUnit> ders;

    // derived by finalize()
    std::vector<int> parent;                 // -1 at the root
    std::vector<int> parent_edge;            // edge feeding each node
    std::vector<std::vector<int>> children;  // child node indices
    std::vector<int> order;                  // root-first traversal

    /// Validates radiality and populates the derived members.
    void finalize();
    int node_index(int id) const;

    double total_load_p() const;  // kW, all phases
    double total_load_q() const;
    /// Copy with every load multiplied (constant power factor when equal).
    FeederModel scaled(double p_mult, double q_mult) const;
};

// ---------------------------------------------------------------------------

struct Case {
    TransmissionNetwork network;
    std::vector<FeederModel> feeders;

    int feeder_index(std::string_view id) const;
    /// Feeder serving boundary link @p link.
    const FeederModel& link_feeder(std::size_t link) const;
    void validate() const;
};

Case parse_case(std::string_view text);
Case load_case(const std::filesystem::path& path);
std::string serialize_case(const Case& c);
void save_case(const Case& c, const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct Contingency {
    enum class Kind { none, branch_outage };
    Kind kind = Kind::none;
    int branch = 0;  // branch id

    static Contingency none() { return {}; }
    static Contingency outage(int branch_id) { return {Kind::branch_outage, branch_id}; }
    /// "none" or "br<id>".
    std::string id() const;
    static Contingency parse(std::string_view id);
};

bool is_connected(const TransmissionNetwork& net);

/// Copy of @p net with the element removed. Throws IslandingError if the
/// result is disconnected, CaseError if the element is unknown or already out.
TransmissionNetwork apply_contingency(const TransmissionNetwork& net, const Contingency& c);

/// One outage per in-service branch, in branch order (islanding ones included).
std::vector<Contingency> n1_contingencies(const TransmissionNetwork& net);

}  // namespace tdvsm
