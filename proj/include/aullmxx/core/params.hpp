#ifndef AULLMXX_CORE_PARAMS_HPP
#define AULLMXX_CORE_PARAMS_HPP

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "aullmxx/core/autograd.hpp"

namespace aullmxx {

// Registry of named tensors: trainable parameters, frozen parameters, and
// non-learnable buffers (running statistics). Registration order is the
// canonical checkpoint order.
template <typename Real>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Var<Real> var;
        bool trainable{true};
        bool buffer{false};
    };

    Var<Real> add(std::string name, Tensor<Real> init, bool trainable = true) {
        check_new(name);
        auto v = make_leaf(std::move(init), trainable, name);
        entries_.push_back({name, v, trainable, false});
        index_[std::move(name)] = entries_.size() - 1;
        return v;
    }

    Var<Real> add_buffer(std::string name, Tensor<Real> init) {
        check_new(name);
        auto v = make_leaf(std::move(init), false, name);
        entries_.push_back({name, v, false, true});
        index_[std::move(name)] = entries_.size() - 1;
        return v;
    }

    Var<Real> get(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw LookupError("parameter not found: " + std::string(name));
        return entries_[it->second].var;
    }

    bool has(std::string_view name) const { return index_.count(std::string(name)) > 0; }

    const std::vector<Entry>& entries() const { return entries_; }

    std::vector<Var<Real>> trainable_with_prefix(std::string_view prefix) const {
        std::vector<Var<Real>> out;
        for (const auto& e : entries_) {
            if (e.trainable && e.name.rfind(prefix, 0) == 0) out.push_back(e.var);
        }
        return out;
    }

    void zero_grads() {
        for (auto& e : entries_) e.var->zero_grad();
    }

    // Names of entries carrying any nonzero gradient; the trainer's
    // parameter-surface audit is built on this.
    std::vector<std::string> names_with_nonzero_grad() const {
        std::vector<std::string> out;
        for (const auto& e : entries_) {
            if (!e.var->grad_alloc) continue;
            for (Real g : e.var->grad.data()) {
                if (g != Real(0)) {
                    out.push_back(e.name);
                    break;
                }
            }
        }
        return out;
    }

private:
    void check_new(const std::string& name) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace aullmxx

#endif  // AULLMXX_CORE_PARAMS_HPP
