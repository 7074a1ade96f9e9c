#pragma once

#include <map>
#include <string>
#include <vector>

#include "viik/autodiff.hpp"

namespace viik::ad {

/// Named tensor collection with stable insertion order. Used for trainable
/// parameters, non-trainable buffers and optimizer moments alike.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor init, bool trainable = true) {
        if (index_.count(name)) throw NumericError("param store: duplicate name " + name);
        init.requires_grad = trainable;
        index_[name] = order_.size();
        order_.push_back(name);
        tensors_.push_back(std::move(init));
        return tensors_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw NumericError("param store: unknown name " + name);
        return tensors_[it->second];
    }
    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw NumericError("param store: unknown name " + name);
        return tensors_[it->second];
    }

    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

private:
    std::vector<std::string> order_;
    std::vector<Tensor> tensors_;
    std::map<std::string, std::size_t> index_;
};

/// Tape leaves for every tensor of a store, keyed by name.
struct BoundParams {
    std::map<std::string, Var> vars;

    Var at(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw NumericError("bound params: unknown name " + name);
        return it->second;
    }
};

inline BoundParams bind_params(Tape& tape, const ParamStore& store) {
    BoundParams bp;
    for (const auto& name : store.names()) bp.vars[name] = tape.input(store.at(name));
    return bp;
}

/// Collects leaf gradients back under their parameter names. Every trainable
/// tensor of the store gets an entry (zeros if it did not influence the loss).
inline std::map<std::string, Tensor> grads_by_name(const GradMap& gm,
                                                   const BoundParams& bp) {
    std::map<std::string, Tensor> out;
    for (const auto& [name, var] : bp.vars)
        if (gm.contains(var)) out[name] = gm.at(var);
    return out;
}

}  // namespace viik::ad
