#pragma once

// Hypernetworks: an MLP maps a mode's meta vector to the flat parameter vector of
// an encoder or decoder, which a WeightSchema slices into per-layer blocks.

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "graphx/layers.hpp"
#include "graphx/tensor.hpp"

namespace graphx {

struct SchemaEntry {
    std::string name;  // "l<layer>.<block>"
    Shape shape;
    std::size_t offset = 0;
    std::size_t fan_in = 1;
    std::size_t layer = 0;
    std::string block;
};

/// Ordered (layer index, block name) layout of every weight block of a layer stack.
class WeightSchema {
   public:
    WeightSchema() = default;

    static WeightSchema build(const std::vector<LayerSpec>& specs) {
        if (specs.empty()) throw ConfigError("build_schema: empty layer list");
        check_chain(specs);
        WeightSchema s;
        s.specs_ = specs;
        for (std::size_t l = 0; l < specs.size(); ++l) {
            for (const auto& b : layer_blocks(specs[l])) {
                SchemaEntry e{"l" + std::to_string(l) + "." + b.name, b.shape, s.total_, b.fan_in, l, b.name};
                s.total_ += shape_size(b.shape);
                s.entries_.push_back(std::move(e));
            }
        }
        return s;
    }

    const std::vector<SchemaEntry>& entries() const { return entries_; }
    const std::vector<LayerSpec>& specs() const { return specs_; }
    std::size_t total_size() const { return total_; }

    /// Per-entry output multiplier: 1/√fan_in for weight matrices and attention vectors, 1 for biases.
    std::vector<double> output_scale() const {
        std::vector<double> scale(total_, 1.0);
        for (const auto& e : entries_) {
            const bool is_bias = e.shape.size() == 1 && e.block[0] == 'b';
            const double f = is_bias ? 1.0 : 1.0 / std::sqrt(static_cast<double>(e.fan_in));
            std::fill_n(scale.begin() + static_cast<long>(e.offset), shape_size(e.shape), f);
        }
        return scale;
    }

    /// Slices a flat (1×total or total) tensor into per-layer weights.
    std::vector<LayerWeights> slice(const Tensor& flat) const {
        if (flat.size() != total_) {
            throw DimensionError("schema expects " + std::to_string(total_) + " values, got " +
                                 std::to_string(flat.size()));
        }
        std::vector<std::map<std::string, Tensor>> per_layer(specs_.size());
        for (const auto& e : entries_) per_layer[e.layer][e.block] = slice_flat(flat, e.offset, e.shape);
        std::vector<LayerWeights> out;
        for (std::size_t l = 0; l < specs_.size(); ++l) out.emplace_back(specs_[l], std::move(per_layer[l]));
        return out;
    }

   private:
    std::vector<LayerSpec> specs_;
    std::vector<SchemaEntry> entries_;
    std::size_t total_ = 0;
};

inline WeightSchema build_schema(const std::vector<LayerSpec>& specs) { return WeightSchema::build(specs); }

using GeneratedWeights = std::vector<LayerWeights>;

struct HyperNetOptions {
    std::size_t hidden = 64;
    std::size_t depth = 3;  // number of linear layers
    Activation activation = Activation::tanh();

    bool operator==(const HyperNetOptions&) const = default;
};

class HyperNet {
   public:
    HyperNet() = default;

    HyperNet(std::size_t meta_dim, WeightSchema schema, HyperNetOptions options, std::mt19937_64& rng)
        : meta_dim_(meta_dim), schema_(std::move(schema)), options_(options) {
        if (meta_dim_ == 0) throw ConfigError("hypernetwork needs a non-empty meta vector");
        if (options_.depth == 0 || options_.hidden == 0) throw ConfigError("hypernetwork depth and width must be positive");
        const auto dims = layer_dims();
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            // variance 1/fan_in; for the output layer this is 1/hidden
            const double std = 1.0 / std::sqrt(static_cast<double>(dims[i]));
            weights_.push_back(Tensor::randn({dims[i], dims[i + 1]}, rng, std, true));
            biases_.push_back(Tensor::zeros({dims[i + 1]}, true));
        }
        scale_ = Tensor({1, schema_.total_size()}, schema_.output_scale());
    }

    /// Flat generated parameter vector (1 × total_size), already output-scaled.
    Tensor flat(std::span<const double> meta) const {
        if (meta.size() != meta_dim_) {
            throw DimensionError("hypernetwork expects meta of length " + std::to_string(meta_dim_) + ", got " +
                                 std::to_string(meta.size()));
        }
        Tensor x({1, meta_dim_}, std::vector<double>(meta.begin(), meta.end()));
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            x = add_bias(matmul(x, weights_[i]), biases_[i]);
            if (i + 1 < weights_.size()) x = activate(x, options_.activation);
        }
        return mul(x, scale_);
    }

    GeneratedWeights generate(std::span<const double> meta) const { return schema_.slice(flat(meta)); }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            out.push_back(weights_[i]);
            out.push_back(biases_[i]);
        }
        return out;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            out.emplace_back(prefix + ".W" + std::to_string(i), weights_[i]);
            out.emplace_back(prefix + ".b" + std::to_string(i), biases_[i]);
        }
        return out;
    }

    const WeightSchema& schema() const { return schema_; }
    std::size_t meta_dim() const { return meta_dim_; }
    const HyperNetOptions& options() const { return options_; }

    static std::size_t param_count(std::size_t meta_dim, std::size_t total, const HyperNetOptions& o) {
        std::vector<std::size_t> dims{meta_dim};
        for (std::size_t i = 0; i + 1 < o.depth; ++i) dims.push_back(o.hidden);
        dims.push_back(total);
        std::size_t n = 0;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) n += dims[i] * dims[i + 1] + dims[i + 1];
        return n;
    }

   private:
    std::vector<std::size_t> layer_dims() const {
        std::vector<std::size_t> dims{meta_dim_};
        for (std::size_t i = 0; i + 1 < options_.depth; ++i) dims.push_back(options_.hidden);
        dims.push_back(schema_.total_size());
        return dims;
    }

    std::size_t meta_dim_ = 0;
    WeightSchema schema_;
    HyperNetOptions options_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
    Tensor scale_;
};

inline GeneratedWeights generate_weights(std::span<const double> meta, const HyperNet& net) {
    return net.generate(meta);
}

}  // namespace graphx
