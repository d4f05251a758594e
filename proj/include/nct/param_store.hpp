#pragma once

#include <map>
#include <string>

#include "nct/tape.hpp"
#include "nct/tensor.hpp"

namespace nct {

// Named parameter map. std::map keeps iteration order stable, which the
// optimizer and checkpoint writer rely on for determinism.
template <typename S>
class ParamStoreT {
  public:
    struct Entry {
        TensorT<S> value;
        bool trainable = true;
    };

    void add(const std::string& name, TensorT<S> value, bool trainable = true) {
        check(!entries_.count(name), "param '" + name + "' already exists");
        entries_[name] = Entry{std::move(value), trainable};
    }

    bool has(const std::string& name) const { return entries_.count(name) > 0; }

    TensorT<S>& at(const std::string& name) {
        auto it = entries_.find(name);
        check(it != entries_.end(), "unknown param '" + name + "'");
        return it->second.value;
    }

    const TensorT<S>& at(const std::string& name) const {
        auto it = entries_.find(name);
        check(it != entries_.end(), "unknown param '" + name + "'");
        return it->second.value;
    }

    bool trainable(const std::string& name) const {
        auto it = entries_.find(name);
        check(it != entries_.end(), "unknown param '" + name + "'");
        return it->second.trainable;
    }

    // Marks every param whose name starts with prefix.
    int set_trainable(const std::string& prefix, bool flag) {
        int n = 0;
        for (auto& [name, e] : entries_) {
            if (name.rfind(prefix, 0) == 0) {
                e.trainable = flag;
                ++n;
            }
        }
        return n;
    }

    void freeze_all() { set_trainable("", false); }

    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

    size_t size() const { return entries_.size(); }

    int64_t numel(const std::string& prefix = "") const {
        int64_t n = 0;
        for (const auto& [name, e] : entries_)
            if (name.rfind(prefix, 0) == 0) n += e.value.numel();
        return n;
    }

    template <typename T2>
    ParamStoreT<T2> cast() const {
        ParamStoreT<T2> out;
        for (const auto& [name, e] : entries_)
            out.add(name, e.value.template cast<T2>(), e.trainable);
        return out;
    }

  private:
    std::map<std::string, Entry> entries_;
};

using ParamStore = ParamStoreT<float>;

// Lazily leafs store params onto a tape so each is a single node per step.
// Trainable entries become grad leaves, frozen ones constants.
template <typename S>
class TapeParams {
  public:
    TapeParams(TapeT<S>& tape, ParamStoreT<S>& store) : tape_(tape), store_(store) {}

    VarT<S> operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        VarT<S> v = tape_.leaf(store_.at(name), store_.trainable(name));
        cache_.emplace(name, v);
        return v;
    }

    // Gradients for every trainable param touched this pass.
    std::map<std::string, TensorT<S>> grads() const {
        std::map<std::string, TensorT<S>> out;
        for (const auto& [name, var] : cache_)
            if (store_.trainable(name)) out[name] = tape_.grad(var);
        return out;
    }

    ParamStoreT<S>& store() { return store_; }

  private:
    TapeT<S>& tape_;
    ParamStoreT<S>& store_;
    std::map<std::string, VarT<S>> cache_;
};

}  // namespace nct
