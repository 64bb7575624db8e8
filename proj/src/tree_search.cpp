#include "dosing/tree_search.hpp"

#include <cmath>
#include <ostream>

#include "dosing/config.hpp"
#include "dosing/nn/layers.hpp"

namespace dosing {

void SearchBudget::validate() const {
    if (candidates < 1 || children < 1) throw SearchError("search budget: candidates and children must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw SearchError("search budget: gamma must be in (0, 1]");
}

SearchTree::SearchTree(Belief root, double root_value) {
    TreeNode n;
    n.belief = std::move(root);
    n.value = root_value;
    n.backed_up = root_value;
    nodes.push_back(std::move(n));
}

double reachability(const SearchTree& tree, int node, double gamma) {
    const TreeNode& leaf = tree.nodes.at(static_cast<std::size_t>(node));
    double score = std::pow(gamma, static_cast<double>(leaf.depth) - 1.0);
    for (int i = node; tree.nodes[i].parent >= 0; i = tree.nodes[i].parent) score *= tree.nodes[i].p_tilde;
    return score;
}

int select_leaf(const SearchTree& tree, double gamma) {
    if (tree.nodes.front().leaf()) return 0;
    int best = -1;
    double best_score = -1.0;
    for (std::size_t i = 1; i < tree.nodes.size(); ++i) {
        if (!tree.nodes[i].leaf()) continue;
        const double s = reachability(tree, static_cast<int>(i), gamma);
        if (s > best_score) {
            best_score = s;
            best = static_cast<int>(i);
        }
    }
    return best;
}

std::size_t tree_policy(std::span<const double> rewards, const std::vector<std::vector<double>>& p_tilde,
                        const std::vector<std::vector<double>>& child_values, double gamma) {
    if (rewards.empty()) throw SearchError("tree_policy: no candidate actions");
    std::size_t best = 0;
    double best_q = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < rewards.size(); ++m) {
        double expected = 0.0;
        for (std::size_t k = 0; k < p_tilde[m].size(); ++k) expected += p_tilde[m][k] * child_values[m][k];
        const double q = rewards[m] + gamma * expected;
        if (q > best_q) {
            best_q = q;
            best = m;
        }
    }
    return best;
}

std::vector<double> normalize_log_likelihoods(std::span<const double> log_likelihoods) {
    const double lse = nn::log_sum_exp(log_likelihoods);
    std::vector<double> out(log_likelihoods.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::exp(log_likelihoods[k] - lse);
    return out;
}

void expand(SearchTree& tree, int leaf, const SearchModels& models, const SearchBudget& budget, Rng& rng) {
    if (tree.expansions >= budget.expansions) throw SearchError("expand: expansion budget exhausted");
    if (leaf < 0 || static_cast<std::size_t>(leaf) >= tree.nodes.size() || !tree.nodes[leaf].leaf())
        throw SearchError("expand: node is not a leaf");
    const Belief s = tree.nodes[leaf].belief;
    const auto out = models.net->forward(s);

    const std::size_t m_count = budget.candidates;
    const std::size_t k_count = budget.children;
    std::vector<EqAction> actions(m_count);
    std::vector<std::vector<Belief>> beliefs(m_count);
    std::vector<std::vector<double>> p_tilde(m_count), values(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        actions[m] = policy_sample(out, rng);
        std::vector<double> loglik(k_count);
        for (std::size_t k = 0; k < k_count; ++k) {
            const auto obs = sample_next_observation(*models.cvae, s, actions[m], rng);
            loglik[k] = observation_log_likelihood(*models.cvae, s, actions[m], obs, budget.likelihood_samples, &rng);
            beliefs[m].push_back(models.encoder->step(s, actions[m], obs));
            values[m].push_back(models.net->value(beliefs[m].back()));
        }
        p_tilde[m] = normalize_log_likelihoods(loglik);
    }
    const std::vector<double> rewards(m_count, 0.0);
    const std::size_t best = tree_policy(rewards, p_tilde, values, budget.gamma);

    tree.nodes[leaf].chosen = actions[best];
    const std::size_t depth = tree.nodes[leaf].depth + 1;
    for (std::size_t k = 0; k < k_count; ++k) {
        TreeNode child;
        child.belief = std::move(beliefs[best][k]);
        child.depth = depth;
        child.parent = leaf;
        child.incoming = actions[best];
        child.p_tilde = p_tilde[best][k];
        child.value = values[best][k];
        child.backed_up = child.value;
        tree.nodes[leaf].children.push_back(static_cast<int>(tree.nodes.size()));
        tree.nodes.push_back(std::move(child));
    }
    ++tree.expansions;
}

double backup(SearchTree& tree, double gamma) {
    for (std::size_t i = tree.nodes.size(); i-- > 0;) {
        TreeNode& n = tree.nodes[i];
        if (n.leaf()) {
            n.backed_up = n.value;
            continue;
        }
        double expected = 0.0;
        for (int c : n.children) expected += tree.nodes[c].p_tilde * tree.nodes[c].backed_up;
        n.backed_up = gamma * expected;
    }
    return tree.nodes.front().backed_up;
}

SearchTree run_search(std::span<const double> root_belief, const SearchModels& models, const SearchBudget& budget,
                      Rng& rng) {
    budget.validate();
    SearchTree tree(Belief(root_belief.begin(), root_belief.end()), models.net->value(root_belief));
    while (tree.expansions < budget.expansions) expand(tree, select_leaf(tree, budget.gamma), models, budget, rng);
    backup(tree, budget.gamma);
    return tree;
}

double search_value(std::span<const double> root_belief, const SearchModels& models, const SearchBudget& budget,
                    Rng& rng) {
    if (budget.expansions == 0) return models.net->value(root_belief);
    return run_search(root_belief, models, budget, rng).root().backed_up;
}

void dump_tree(std::ostream& out, const SearchTree& tree) {
    out << "node parent depth vaso fluid p_tilde value backed_up\n";
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const TreeNode& n = tree.nodes[i];
        out << i << ' ' << n.parent << ' ' << n.depth << ' ' << format_double(n.incoming[0]) << ' '
            << format_double(n.incoming[1]) << ' ' << (n.parent < 0 ? std::string("nan") : format_double(n.p_tilde))
            << ' ' << format_double(n.value) << ' ' << format_double(n.backed_up) << '\n';
    }
}

}  // namespace dosing
