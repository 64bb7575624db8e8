#pragma once

#include <iosfwd>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "dosing/nn/rng.hpp"
#include "dosing/policy_net.hpp"
#include "dosing/state_repr.hpp"

namespace dosing {

class SearchError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct SearchBudget {
    std::size_t expansions = 16;  // E
    std::size_t candidates = 8;   // M actions sampled from π per expansion
    std::size_t children = 5;     // K sampled observations per action
    double gamma = 0.99;
    /// Latent draws for the sibling likelihoods; 0 = decoder at the prior mean.
    std::size_t likelihood_samples = 0;

    void validate() const;
};

/// Nodes are stored in creation order, so a child always has a larger index than its parent.
struct TreeNode {
    Belief belief;
    std::size_t depth = 0;
    int parent = -1;
    EqAction incoming{};  // action on the edge from the parent
    double p_tilde = std::numeric_limits<double>::quiet_NaN();
    double value = 0.0;   // critic V(s)
    double backed_up = 0.0;
    EqAction chosen{};    // tree-policy action, internal nodes only
    std::vector<int> children;

    bool leaf() const { return children.empty(); }
};

struct SearchTree {
    std::vector<TreeNode> nodes;
    std::size_t expansions = 0;

    explicit SearchTree(Belief root, double root_value);
    const TreeNode& root() const { return nodes.front(); }
};

struct SearchModels {
    const HistoryEncoder* encoder = nullptr;
    const ObsCvae* cvae = nullptr;
    const PolicyValueNet* net = nullptr;
};

/// γ^{D-1} times the product of p̃ along the path from the root (root excluded).
double reachability(const SearchTree& tree, int node, double gamma);

/// Leaf to expand next: the root while it is unexpanded, otherwise the leaf with the
/// largest reachability (lowest index on ties).
int select_leaf(const SearchTree& tree, double gamma);

/// Index of argmax_m r_m + γ Σ_k p̃_{m,k} V_{m,k}; lowest index on ties. Throws SearchError
/// when there are no candidates.
std::size_t tree_policy(std::span<const double> rewards, const std::vector<std::vector<double>>& p_tilde,
                        const std::vector<std::vector<double>>& child_values, double gamma);

/// Normalizes sibling log-likelihoods: p̃_k = exp(l_k - log Σ exp l).
std::vector<double> normalize_log_likelihoods(std::span<const double> log_likelihoods);

/// Samples M candidate actions from π(·|s_leaf); for each, K observations o' from the CVAE,
/// successor beliefs by one GRU step and sibling weights p̃ from the observation likelihood.
/// Keeps only the children of the tree-policy action. Throws SearchError when the
/// expansion budget is exhausted or the node is not a leaf.
void expand(SearchTree& tree, int leaf, const SearchModels& models, const SearchBudget& budget, Rng& rng);

/// Bottom-up Bellman backup with zero in-tree reward; fills backed_up and returns the root value.
double backup(SearchTree& tree, double gamma);

SearchTree run_search(std::span<const double> root_belief, const SearchModels& models, const SearchBudget& budget,
                      Rng& rng);
double search_value(std::span<const double> root_belief, const SearchModels& models, const SearchBudget& budget,
                    Rng& rng);

/// Text dump, one node per line after a header:
///   node parent depth vaso fluid p_tilde value backed_up
/// (root: parent -1, p_tilde nan; vaso/fluid are the incoming edge action).
void dump_tree(std::ostream& out, const SearchTree& tree);

}  // namespace dosing
