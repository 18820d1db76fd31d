#include "sfn/graph.hpp"

namespace sfn {

namespace {
thread_local Graph* t_active = nullptr;
}

Graph* active_graph() noexcept { return t_active; }

GraphScope::GraphScope(Graph& graph) : previous_(t_active) { t_active = &graph; }
GraphScope::~GraphScope() { t_active = previous_; }

NoGradScope::NoGradScope() : previous_(t_active) { t_active = nullptr; }
NoGradScope::~NoGradScope() { t_active = previous_; }

void Graph::record(std::shared_ptr<TensorImpl> output, BackwardFn backward) {
  if (consumed_) throw ContractError("recording into a graph that already ran backward");
  nodes_.push_back(Node{std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward called twice without reset");
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("loss does not depend on any tensor that requires grad");
  }
  consumed_ = true;
  auto& seed = loss.impl().grad;
  seed.assign(1, 0.0);
  seed[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const auto& g = it->output->grad;
    if (g.empty()) continue;  // not on a path to the loss
    it->backward(g);
  }
}

void Graph::reset() {
  // Interior results may be reachable from the caller; their gradients are
  // only meaningful for the pass that produced them.
  for (auto& node : nodes_) node.output->grad.clear();
  nodes_.clear();
  consumed_ = false;
}

}  // namespace sfn
