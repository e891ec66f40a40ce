#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphx/graph.hpp"

namespace graphx {

/// A collection of modes over one node universe with n aligned samples each.
struct Dataset {
    std::vector<std::string> universe;  // sorted global node ids
    std::vector<ModeGraph> modes;
    std::size_t n = 0;
    std::size_t d = 1;
    std::size_t meta_dim = 0;
    std::size_t type_dims = 0;    // leading one-hot mode-type segment of every meta vector
    std::string meta_encoding;    // free-text description of the meta layout

    std::size_t num_nodes() const { return universe.size(); }

    long find_mode(const std::string& id) const {
        for (std::size_t i = 0; i < modes.size(); ++i)
            if (modes[i].id() == id) return static_cast<long>(i);
        return -1;
    }

    const ModeGraph& mode(const std::string& id) const {
        const long i = find_mode(id);
        if (i < 0) throw ValidationError("unknown mode '" + id + "'");
        return modes[static_cast<std::size_t>(i)];
    }

    std::vector<std::string> mode_ids() const {
        std::vector<std::string> out;
        for (const auto& m : modes) out.push_back(m.id());
        return out;
    }

    void validate() const {
        if (universe.empty()) throw ValidationError("dataset: empty node universe");
        if (!std::is_sorted(universe.begin(), universe.end()) ||
            std::adjacent_find(universe.begin(), universe.end()) != universe.end()) {
            throw ValidationError("dataset: universe must be sorted and unique");
        }
        if (modes.empty()) throw ValidationError("dataset: no modes");
        if (meta_dim == 0) throw ValidationError("dataset: meta_dim must be positive");
        if (type_dims > meta_dim) throw ValidationError("dataset: type_dims exceeds meta_dim");
        if (d == 0) throw ValidationError("dataset: feature dimension must be positive");
        std::set<std::string> ids;
        for (const auto& m : modes) {
            if (!ids.insert(m.id()).second) throw ValidationError("dataset: duplicate mode id '" + m.id() + "'");
            if (m.spec.meta.size() != meta_dim) {
                throw ValidationError("mode '" + m.id() + "': meta length " + std::to_string(m.spec.meta.size()) +
                                      " != meta_dim " + std::to_string(meta_dim));
            }
            for (double v : m.spec.meta)
                if (!std::isfinite(v)) throw ValidationError("mode '" + m.id() + "': non-finite meta value");
            if (m.num_samples() != n) {
                throw ValidationError("mode '" + m.id() + "': " + std::to_string(m.num_samples()) + " samples, expected " +
                                      std::to_string(n));
            }
            if (n > 0 && m.feature_dim() != d) throw ValidationError("mode '" + m.id() + "': feature width differs from d");
            for (const auto& v : m.spec.node_ids)
                if (!std::binary_search(universe.begin(), universe.end(), v))
                    throw ValidationError("mode '" + m.id() + "': node '" + v + "' is not in the universe");
            for (const auto& v : m.attr_node_ids)
                if (!std::binary_search(universe.begin(), universe.end(), v))
                    throw ValidationError("mode '" + m.id() + "': attribute node '" + v + "' is not in the universe");
            m.validate();
        }
    }

    /// Same modes restricted to the given sample indices.
    Dataset select_samples(const std::vector<std::size_t>& idx) const {
        Dataset out = *this;
        out.n = idx.size();
        for (std::size_t k = 0; k < modes.size(); ++k) {
            out.modes[k].samples.clear();
            for (auto i : idx) {
                if (i >= n) throw ValidationError("sample index " + std::to_string(i) + " out of range");
                out.modes[k].samples.push_back(modes[k].samples[i]);
            }
        }
        return out;
    }
};

}  // namespace graphx
