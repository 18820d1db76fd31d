#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sfn/tensor.hpp"

namespace sfn {

/// Reverse-mode tape.
///
/// Operators append a node when a Graph is active on the calling thread (see
/// GraphScope) and at least one input requires a gradient. Nodes are recorded
/// in execution order, so walking them backwards is a valid reverse
/// topological order.
class Graph {
 public:
  /// Receives d(loss)/d(output); accumulates into input gradients.
  using BackwardFn = std::function<void(std::span<const double> grad_output)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void record(std::shared_ptr<TensorImpl> output, BackwardFn backward);

  /// Populates .grad of every requires_grad tensor reachable from `loss`.
  /// A second call without reset() throws ContractError.
  void backward(const Tensor& loss);

  /// Drops all recorded nodes so the graph can be reused.
  void reset();

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Makes `graph` the recording target for the current thread until destroyed.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

/// Suspends recording on the current thread (inference / frozen modules).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph* previous_;
};

Graph* active_graph() noexcept;

}  // namespace sfn
