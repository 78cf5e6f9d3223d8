#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "meshalign/tensor.hpp"

namespace meshalign {

// Per-parameter gradient accumulator used when several graphs (one per
// sample) backward against shared leaves. Keyed by the leaf's storage.
template <typename T>
class GradTable {
 public:
  std::vector<T>& slot(const Tensor<T>& leaf) {
    auto& v = table_[leaf.raw()];
    if (v.empty()) v.assign(static_cast<std::size_t>(leaf.numel()), static_cast<T>(0));
    return v;
  }
  const std::vector<T>* find(const Tensor<T>& leaf) const {
    auto it = table_.find(leaf.raw());
    return it == table_.end() ? nullptr : &it->second;
  }

 private:
  std::unordered_map<const void*, std::vector<T>> table_;
};

// Wengert-list reverse-mode tape. Construction pushes the tape as the
// active recording target for the current thread; ops executed while a
// tape is active append backward closures in execution order, which is a
// valid topological order for the reverse sweep. A tape is consumable
// exactly once and its node list is freed by backward().
template <typename T>
class Tape {
 public:
  Tape() { stack().push_back(this); }
  ~Tape() {
    auto& s = stack();
    for (auto it = s.rbegin(); it != s.rend(); ++it) {
      if (*it == this) {
        s.erase(std::next(it).base());
        break;
      }
    }
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() {
    auto& s = stack();
    return s.empty() ? nullptr : s.back();
  }

  void record(const char* op_name, std::function<void()> backward_fn) {
    (void)op_name;
    nodes_.push_back(std::move(backward_fn));
  }

  void note_leaf(const Tensor<T>& leaf) {
    for (const auto& l : leaves_)
      if (l.raw() == leaf.raw()) return;
    leaves_.push_back(leaf);
  }
  const std::vector<Tensor<T>>& leaves() const { return leaves_; }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  GradTable<T>* sink() { return sink_; }

  // Seeds d(loss)/d(loss) = 1 and runs all recorded closures in reverse.
  // When `sink` is given, leaf gradients land in the table instead of the
  // shared leaf buffers (callers merge tables in a fixed order).
  void backward(Tensor<T>& loss, GradTable<T>* sink = nullptr) {
    MA_CHECK(!consumed_, "backward: graph already consumed by a previous backward");
    MA_CHECK(loss.numel() == 1,
             "backward: loss must be scalar, got shape " << shape_str(loss.shape()));
    consumed_ = true;
    sink_ = sink;
    if (loss.requires_grad()) {
      loss.ensure_grad();
      loss.grad()[0] = static_cast<T>(1);
      for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }
    // Every requires-grad leaf seen by the graph ends up with a gradient,
    // zero if no path reached it (e.g. behind detach).
    for (auto& leaf : leaves_) {
      if (sink_ != nullptr)
        sink_->slot(leaf);
      else
        leaf.ensure_grad();
    }
    sink_ = nullptr;
    nodes_.clear();
  }

 private:
  static std::vector<Tape*>& stack() {
    thread_local std::vector<Tape*> s;
    return s;
  }

  std::vector<std::function<void()>> nodes_;
  std::vector<Tensor<T>> leaves_;
  GradTable<T>* sink_ = nullptr;
  bool consumed_ = false;
};

namespace detail {

// Accumulate a backward contribution into `t`, routing leaf gradients to
// the active sink when one is installed.
template <typename T>
void accumulate(Tape<T>* tape, Tensor<T>& t, const T* g, Index n) {
  MA_CHECK(n == t.numel(), "internal: gradient size mismatch");
  std::vector<T>* dst = nullptr;
  if (tape != nullptr && tape->sink() != nullptr && !t.is_op_output()) {
    dst = &tape->sink()->slot(t);
  } else {
    t.ensure_grad();
    dst = &t.grad();
  }
  T* d = dst->data();
  for (Index i = 0; i < n; ++i) d[i] += g[i];
}

template <typename T>
const T* grad_if_any(const Tensor<T>& t) {
  return t.has_grad() ? t.grad().data() : nullptr;
}

}  // namespace detail

}  // namespace meshalign
