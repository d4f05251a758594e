#pragma once

#include <functional>
#include <vector>

#include "nct/kernels.hpp"
#include "nct/tensor.hpp"

namespace nct {

template <typename S>
class TapeT;

// Handle into a tape node. Cheap to copy; valid while the tape lives.
template <typename S>
struct VarT {
    TapeT<S>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const TensorT<S>& val() const;
    const std::vector<int>& shape() const { return val().shape; }
};

// Recorded computation over tensors. Nodes are appended in forward order, so
// walking ids backwards is a reverse topological order for backprop.
template <typename S>
class TapeT {
  public:
    using BackwardFn = std::function<void(TapeT&, const TensorT<S>&)>;

    VarT<S> leaf(TensorT<S> v, bool requires_grad = false) {
        return push(std::move(v), requires_grad, nullptr);
    }

    VarT<S> constant(TensorT<S> v) { return leaf(std::move(v), false); }

    VarT<S> push(TensorT<S> v, bool needs_grad, BackwardFn bw) {
        nodes_.push_back(Node{std::move(v), needs_grad, std::move(bw)});
        grads_.emplace_back();
        has_grad_.push_back(false);
        VarT<S> var;
        var.tape = this;
        var.id = static_cast<int>(nodes_.size()) - 1;
        return var;
    }

    const TensorT<S>& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    bool needs_grad(const VarT<S>& v) const { return needs_grad(v.id); }

    void accum_grad(int id, const TensorT<S>& g) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad) return;
        if (!has_grad_[static_cast<size_t>(id)]) {
            grads_[static_cast<size_t>(id)] = g.clone();
            has_grad_[static_cast<size_t>(id)] = true;
        } else {
            kern::accum(grads_[static_cast<size_t>(id)], g);
        }
    }

    void backward(const VarT<S>& loss) {
        check(loss.tape == this, "backward: var belongs to a different tape");
        check(val(loss.id).numel() == 1,
              "backward: loss must be scalar, got shape " + shape_str(val(loss.id).shape));
        accum_grad(loss.id, TensorT<S>::scalar(static_cast<S>(1)));
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.needs_grad || !has_grad_[static_cast<size_t>(id)] || !n.backward) continue;
            n.backward(*this, grads_[static_cast<size_t>(id)]);
        }
    }

    bool has_grad(const VarT<S>& v) const { return has_grad_[static_cast<size_t>(v.id)]; }

    // Zeros if the node never received a gradient.
    TensorT<S> grad(const VarT<S>& v) const {
        if (has_grad_[static_cast<size_t>(v.id)]) return grads_[static_cast<size_t>(v.id)];
        return TensorT<S>(val(v.id).shape);
    }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        TensorT<S> value;
        bool needs_grad;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::vector<TensorT<S>> grads_;
    std::vector<bool> has_grad_;
};

template <typename S>
const TensorT<S>& VarT<S>::val() const {
    return tape->val(id);
}

using Tape = TapeT<float>;
using Var = VarT<float>;

}  // namespace nct
