#pragma once

// Tree-structured end-edge-cloud network: node registry, tier queries,
// same-tier migration and the interaction-protocol compatibility check
// that decides whether a migration is admissible.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedagg/nn.hpp"

namespace fedagg::topo {

struct NodeId {
    std::uint32_t value = 0;

    auto operator<=>(const NodeId&) const = default;
};

std::string to_string(NodeId id);

enum class Role { cloud, edge, device };

std::string_view to_string(Role role);

struct NodeDescriptor {
    NodeId id;
    int tier = 1;
    Role role = Role::cloud;
    nn::ModelSpec model_spec;
    std::optional<NodeId> parent;
    std::vector<NodeId> children;  // ascending
};

// One entry of a topology description. Tiers are explicit so that a
// layering gap in the description is detectable.
struct NodeLayout {
    NodeId id;
    int tier = 1;
    std::optional<NodeId> parent;
    nn::ModelSpec model_spec;
};

struct TreeLayout {
    std::vector<NodeLayout> nodes;
};

// Balanced layered layout: tier t gets counts[t-1] nodes, numbered
// consecutively from 0 in tier order, and children are split into
// contiguous, nearly equal blocks across the tier above.
TreeLayout balanced_layout(const std::vector<std::size_t>& counts,
                           const std::vector<nn::ModelSpec>& specs);

// Three tiers with round(sqrt(K)) edges between the cloud and K devices.
TreeLayout three_tier_layout(std::size_t devices, const nn::ModelSpec& device_spec,
                             const nn::ModelSpec& edge_spec, const nn::ModelSpec& cloud_spec);

class EecNet {
public:
    const std::map<NodeId, NodeDescriptor>& nodes() const { return nodes_; }
    const NodeDescriptor& node(NodeId id) const;
    bool contains(NodeId id) const { return nodes_.count(id) != 0; }
    NodeId root() const { return root_; }
    int tier_count() const { return tier_count_; }
    std::size_t size() const { return nodes_.size(); }

    // Leaves are the device tier; an edge left without children stays a non-leaf.
    bool is_leaf(NodeId id) const { return node(id).tier == tier_count_; }
    NodeId parent(NodeId id) const;
    const std::vector<NodeId>& children(NodeId id) const { return node(id).children; }

    std::set<NodeId> leaves_of(NodeId id) const;
    std::vector<NodeId> leaves() const;
    std::vector<NodeId> tier(int t) const;
    // True when `ancestor` lies on the path from `id` to the root (inclusive of id).
    bool is_ancestor(NodeId ancestor, NodeId id) const;

    // Throws TopologyError if any tree invariant fails.
    void validate() const;

    std::string describe() const;

private:
    friend EecNet build_tree(const TreeLayout& layout, bool allow_idle_nodes);
    friend EecNet migrate_unchecked(const EecNet& net, NodeId v, NodeId new_parent);

    std::map<NodeId, NodeDescriptor> nodes_;
    NodeId root_;
    int tier_count_ = 0;
};

// Non-leaf tiers must have children unless allow_idle_nodes is set; a
// migration can leave an edge without children, and a checkpoint of such a
// tree must still load.
EecNet build_tree(const TreeLayout& layout, bool allow_idle_nodes = false);

// Model(a) <= Model(b) under the default sub-capacity containment: equal
// depth, every width of a at most the matching width of b, and no more
// parameters.
bool sub_capacity(const nn::ModelSpec& a, const nn::ModelSpec& b);

struct ProtocolCompat {
    enum class Kind { equivalence, partial_order };
    using Comparator = std::function<bool(const nn::ModelSpec&, const nn::ModelSpec&)>;

    Kind kind = Kind::equivalence;
    Comparator precedes = sub_capacity;

    static ProtocolCompat equivalence() { return {Kind::equivalence, sub_capacity}; }
    static ProtocolCompat partial_order(Comparator cmp = sub_capacity) {
        return {Kind::partial_order, std::move(cmp)};
    }
};

struct MigrationVerdict {
    bool allowed = false;
    std::string reason;

    explicit operator bool() const { return allowed; }
};

// Throws TopologyError for unknown nodes, the root, a new parent on a
// different tier than the current one, or a retarget into v's own subtree.
MigrationVerdict can_migrate(const EecNet& net, NodeId v, NodeId new_parent, const ProtocolCompat& compat);

// Reattaches v with its whole subtree under new_parent. Throws
// MigrationRejected carrying the verdict when the protocol refuses.
EecNet migrate(const EecNet& net, NodeId v, NodeId new_parent, const ProtocolCompat& compat);

}  // namespace fedagg::topo
