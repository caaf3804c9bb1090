#include <cmath>
#include <iostream>
#include <sstream>

#include "hierenv/pipeline.hpp"

namespace hierenv {

namespace {

struct CheckSetup {
    Batch batch;
    uint64_t seed = 0;
};

// The losses contain locally-constant decisions (edge selection against the
// threshold, argmax environments). A finite-difference probe is well posed
// only when no decision sits within a hair of its boundary, so the batch is
// re-seeded until every margin clears.
bool margins_ok(const Stage1Model& model, const Batch& batch, uint64_t seed, double margin) {
    RngStream gumbel = derive_stream(seed, "gumbel");
    Stage1BatchLoss out = stage1_batch_loss(model, batch, SelectionMode::GradCheck, &gumbel);
    for (const auto& lv : out.levels)
        if (lv.min_threshold_margin < margin || lv.min_argmax_margin < 1e-4) return false;
    return true;
}

CheckSetup make_batch(const RunConfig& cfg, const Stage1Model& model) {
    for (uint64_t attempt = 0; attempt < 16; ++attempt) {
        const uint64_t seed = cfg.seed + 1000 * attempt;
        SyntheticConfig sc;
        sc.n_train = 4;
        sc.n_val = 1;
        sc.n_test = 1;
        sc.rho_train = 0.5;
        sc.label_flip_prob = 0.0;
        sc.seed = seed;
        SyntheticDataset ds = generate_synthetic(sc);
        Batch batch = batch_graphs(ds.train);
        if (margins_ok(model, batch, seed, 1e-3)) return {std::move(batch), seed};
    }
    throw ContractError("gradcheck: could not find a batch with safe decision margins");
}

}  // namespace

int cmd_gradcheck(const RunConfig& cfg, double tolerance, std::ostream* log) {
    std::ostream& out = log ? *log : std::cout;
    const double eps = 1e-5;

    RngStream init = derive_stream(cfg.seed, "stage1-init");
    HierarchyConfig hier = cfg.hierarchy();
    Stage1Model model = Stage1Model::create(hier, kSyntheticFeatureDim, kSyntheticNumClasses,
                                            cfg.hidden_dim, cfg.proj_dim, cfg.layers_stage1, init);
    CheckSetup setup = make_batch(cfg, model);
    const Batch& batch = setup.batch;
    const uint64_t seed = setup.seed;

    int failures = 0;
    auto run_check = [&](const std::string& name, const std::function<Tensor()>& loss_fn,
                         ParamStore& params) {
        FdReport rep = finite_difference_check(loss_fn, params, eps);
        const bool ok = rep.max_rel_err < tolerance;
        out << (ok ? "PASS" : "FAIL") << "  " << name << "  max_rel_err=" << rep.max_rel_err
            << "\n";
        if (!ok) ++failures;
    };

    enum class Component { Diversification, EnvConsistency, LabelConsistency, Combined, Total };
    auto stage1_loss = [&](Component c, int level) {
        return [&, c, level]() {
            RngStream gumbel = derive_stream(seed, "gumbel");
            Stage1BatchLoss r = stage1_batch_loss(model, batch, SelectionMode::GradCheck, &gumbel);
            switch (c) {
                case Component::Diversification: return r.levels[level].diversification;
                case Component::EnvConsistency: return r.levels[level].env_consistency;
                case Component::LabelConsistency: return r.levels[level].label_consistency;
                case Component::Combined: return r.levels[level].combined;
                case Component::Total: return r.total;
            }
            return r.total;
        };
    };

    for (int k = 0; k < hier.levels; ++k) {
        const std::string lv = "level " + std::to_string(k + 1);
        run_check("env diversification loss, " + lv, stage1_loss(Component::Diversification, k),
                  model.params);
        run_check("env consistency loss, " + lv, stage1_loss(Component::EnvConsistency, k),
                  model.params);
        run_check("label consistency loss, " + lv, stage1_loss(Component::LabelConsistency, k),
                  model.params);
        run_check("combined level loss, " + lv, stage1_loss(Component::Combined, k), model.params);
    }
    run_check("total hierarchy loss", stage1_loss(Component::Total, 0), model.params);

    // Stage-2 penalized classification loss over a fixed 2-environment split.
    RngStream init2 = derive_stream(cfg.seed, "stage2-init");
    InvariantClassifier cls = InvariantClassifier::create(
        kSyntheticFeatureDim, kSyntheticNumClasses, cfg.hidden_dim, cfg.layers_stage2, cfg.dropout,
        init2);
    std::vector<int> envs = {0, 1, 0, 1};
    const double lambda = cfg.lambda > 0 ? cfg.lambda : 1.0;
    auto inv_loss = [&]() {
        RngStream drop = derive_stream(seed, "dropout");
        Tensor z = cls.logits(batch, &drop);
        return invariant_loss(z, batch.labels, envs, lambda);
    };
    run_check("invariant classification loss", inv_loss, cls.params);

    out << (failures == 0 ? "gradcheck: all checks passed" :
                            "gradcheck: " + std::to_string(failures) + " check(s) failed")
        << "\n";
    return failures;
}

}  // namespace hierenv
