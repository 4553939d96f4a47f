#include "fedagg/topology.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fedagg/errors.hpp"

namespace fedagg::topo {

std::string to_string(NodeId id) { return std::to_string(id.value); }

std::string_view to_string(Role role) {
    switch (role) {
        case Role::cloud: return "cloud";
        case Role::edge: return "edge";
        case Role::device: return "device";
    }
    return "edge";
}

TreeLayout balanced_layout(const std::vector<std::size_t>& counts, const std::vector<nn::ModelSpec>& specs) {
    if (counts.size() < 2) throw TopologyError("a layered layout needs at least two tiers");
    if (specs.size() != counts.size()) throw TopologyError("need one model spec per tier");
    if (counts.front() != 1) throw TopologyError("tier 1 must hold exactly one root");
    TreeLayout layout;
    std::uint32_t next = 0;
    std::uint32_t prev_first = 0;
    for (std::size_t t = 0; t < counts.size(); ++t) {
        if (counts[t] == 0) throw TopologyError("tier " + std::to_string(t + 1) + " is empty");
        if (t > 0 && counts[t] < counts[t - 1])
            throw TopologyError("tier " + std::to_string(t + 1) + " has fewer nodes than the tier above");
        std::uint32_t first = next;
        for (std::size_t j = 0; j < counts[t]; ++j) {
            NodeLayout n{NodeId{next++}, static_cast<int>(t + 1), std::nullopt, specs[t]};
            if (t > 0) n.parent = NodeId{prev_first + static_cast<std::uint32_t>(j * counts[t - 1] / counts[t])};
            layout.nodes.push_back(std::move(n));
        }
        prev_first = first;
    }
    return layout;
}

TreeLayout three_tier_layout(std::size_t devices, const nn::ModelSpec& device_spec, const nn::ModelSpec& edge_spec,
                             const nn::ModelSpec& cloud_spec) {
    auto edges = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(devices))));
    edges = std::max<std::size_t>(edges, 1);
    return balanced_layout({1, edges, devices}, {cloud_spec, edge_spec, device_spec});
}

const NodeDescriptor& EecNet::node(NodeId id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw TopologyError("unknown node " + to_string(id));
    return it->second;
}

NodeId EecNet::parent(NodeId id) const {
    const auto& n = node(id);
    if (!n.parent) throw TopologyError("node " + to_string(id) + " is the root and has no parent");
    return *n.parent;
}

std::set<NodeId> EecNet::leaves_of(NodeId id) const {
    std::set<NodeId> out;
    std::vector<NodeId> stack{id};
    node(id);
    while (!stack.empty()) {
        NodeId cur = stack.back();
        stack.pop_back();
        const auto& n = node(cur);
        if (n.tier == tier_count_) out.insert(cur);
        for (auto c : n.children) stack.push_back(c);
    }
    return out;
}

std::vector<NodeId> EecNet::leaves() const { return tier(tier_count_); }

std::vector<NodeId> EecNet::tier(int t) const {
    std::vector<NodeId> out;
    for (const auto& [id, n] : nodes_)
        if (n.tier == t) out.push_back(id);
    return out;
}

bool EecNet::is_ancestor(NodeId ancestor, NodeId id) const {
    std::optional<NodeId> cur = id;
    while (cur) {
        if (*cur == ancestor) return true;
        cur = node(*cur).parent;
    }
    return false;
}

void EecNet::validate() const {
    if (nodes_.size() < 2) throw TopologyError("a network needs a root and at least one leaf");
    std::size_t roots = 0;
    std::size_t edges = 0;
    for (const auto& [id, n] : nodes_) {
        if (!n.parent) {
            ++roots;
            if (n.tier != 1) throw TopologyError("root " + to_string(id) + " is not on tier 1");
            continue;
        }
        ++edges;
        auto p = nodes_.find(*n.parent);
        if (p == nodes_.end()) throw TopologyError("node " + to_string(id) + " has an unknown parent");
        if (n.tier != p->second.tier + 1)
            throw TopologyError("tier gap between node " + to_string(id) + " (tier " + std::to_string(n.tier) +
                                ") and its parent " + to_string(*n.parent) + " (tier " +
                                std::to_string(p->second.tier) + ")");
        const auto& siblings = p->second.children;
        if (std::count(siblings.begin(), siblings.end(), id) != 1)
            throw TopologyError("parent " + to_string(*n.parent) + " does not list child " + to_string(id));
    }
    if (roots != 1) throw TopologyError("expected exactly one root, found " + std::to_string(roots));
    if (edges != nodes_.size() - 1) throw TopologyError("edge count does not match a tree");
    std::size_t listed = 0;
    for (const auto& [id, n] : nodes_) {
        if (n.tier == tier_count_ && !n.children.empty())
            throw TopologyError("device " + to_string(id) + " has children");
        if (!std::is_sorted(n.children.begin(), n.children.end()))
            throw TopologyError("children of " + to_string(id) + " are not ordered");
        listed += n.children.size();
    }
    if (listed != edges) throw TopologyError("child lists disagree with parent links");
    // Every node reaches the root (no cycles) because tiers strictly decrease upward.
    if (leaves_of(root_).size() != leaves().size()) throw TopologyError("root does not cover every leaf");
}

EecNet build_tree(const TreeLayout& layout, bool allow_idle_nodes) {
    EecNet net;
    int max_tier = 0;
    for (const auto& n : layout.nodes) {
        if (n.parent && *n.parent == n.id) throw TopologyError("cycle: node " + to_string(n.id) + " is its own parent");
        if (n.tier < 1) throw TopologyError("node " + to_string(n.id) + " has tier < 1");
        n.model_spec.validate();
        NodeDescriptor d{n.id, n.tier, Role::edge, n.model_spec, n.parent, {}};
        if (!net.nodes_.emplace(n.id, std::move(d)).second)
            throw TopologyError("duplicate node id " + to_string(n.id));
        max_tier = std::max(max_tier, n.tier);
    }
    std::vector<NodeId> roots;
    for (auto& [id, d] : net.nodes_) {
        if (!d.parent) {
            roots.push_back(id);
            continue;
        }
        auto p = net.nodes_.find(*d.parent);
        if (p == net.nodes_.end())
            throw TopologyError("orphaned node " + to_string(id) + ": parent " + to_string(*d.parent) + " does not exist");
        p->second.children.push_back(id);
    }
    if (roots.empty()) throw TopologyError("cycle: no root node");
    if (roots.size() > 1) throw TopologyError("multiple roots: " + std::to_string(roots.size()));
    net.root_ = roots.front();
    net.tier_count_ = max_tier;

    // Walk up from every node; a path longer than |V| is a cycle.
    for (const auto& [id, d] : net.nodes_) {
        std::optional<NodeId> cur = d.parent;
        std::size_t steps = 0;
        while (cur) {
            if (++steps > net.nodes_.size()) throw TopologyError("cycle through node " + to_string(id));
            cur = net.nodes_.at(*cur).parent;
        }
    }
    for (auto& [id, d] : net.nodes_) {
        std::sort(d.children.begin(), d.children.end());
        d.role = d.tier == 1 ? Role::cloud : d.tier == max_tier ? Role::device : Role::edge;
        if (!allow_idle_nodes && d.tier < max_tier && d.children.empty())
            throw TopologyError("node " + to_string(id) + " on tier " + std::to_string(d.tier) + " has no children");
    }
    net.validate();
    return net;
}

bool sub_capacity(const nn::ModelSpec& a, const nn::ModelSpec& b) {
    if (a.layer_widths.size() != b.layer_widths.size()) return false;
    for (std::size_t i = 0; i < a.layer_widths.size(); ++i)
        if (a.layer_widths[i] > b.layer_widths[i]) return false;
    return a.parameter_count() <= b.parameter_count();
}

MigrationVerdict can_migrate(const EecNet& net, NodeId v, NodeId new_parent, const ProtocolCompat& compat) {
    const auto& node = net.node(v);
    const auto& target = net.node(new_parent);
    NodeId current = net.parent(v);
    if (target.tier != net.node(current).tier)
        throw TopologyError("new parent " + to_string(new_parent) + " is on tier " + std::to_string(target.tier) +
                            " but the current parent is on tier " + std::to_string(net.node(current).tier));
    if (net.is_ancestor(v, new_parent))
        throw TopologyError("node " + to_string(v) + " is an ancestor of " + to_string(new_parent));
    if (new_parent == current) return {true, "already a child of " + to_string(new_parent)};
    if (compat.kind == ProtocolCompat::Kind::equivalence)
        return {true, "equivalence protocol admits every same-tier parent"};
    if (compat.precedes(node.model_spec, target.model_spec))
        return {true, "Model(" + to_string(v) + ") precedes Model(" + to_string(new_parent) + ")"};
    return {false, "partial order rejects: Model(" + to_string(v) + ") does not precede Model(" +
                       to_string(new_parent) + ")"};
}

EecNet migrate_unchecked(const EecNet& net, NodeId v, NodeId new_parent) {
    EecNet out = net;
    NodeId old_parent = out.parent(v);
    auto& old_children = out.nodes_.at(old_parent).children;
    old_children.erase(std::remove(old_children.begin(), old_children.end(), v), old_children.end());
    auto& new_children = out.nodes_.at(new_parent).children;
    new_children.insert(std::upper_bound(new_children.begin(), new_children.end(), v), v);
    out.nodes_.at(v).parent = new_parent;
    out.validate();
    return out;
}

EecNet migrate(const EecNet& net, NodeId v, NodeId new_parent, const ProtocolCompat& compat) {
    MigrationVerdict verdict = can_migrate(net, v, new_parent, compat);
    if (!verdict) throw MigrationRejected(verdict.reason);
    return migrate_unchecked(net, v, new_parent);
}

std::string EecNet::describe() const {
    std::ostringstream os;
    auto rec = [&](auto&& self, NodeId id) -> void {
        os << to_string(id);
        const auto& c = node(id).children;
        if (c.empty()) return;
        os << '(';
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (i) os << ',';
            self(self, c[i]);
        }
        os << ')';
    };
    rec(rec, root_);
    return os.str();
}

}  // namespace fedagg::topo
