#include "mebm/cli.hpp"

#include <CLI11.hpp>

int main(int argc, char** argv) {
    CLI::App app{"MEG phoneme decoding toolkit"};
    app.require_subcommand(1);

    mebm::SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic recordings and a manifest");
    synth_cmd->add_option("--sessions", synth.sessions, "Number of training sessions")->capture_default_str();
    synth_cmd->add_option("--events-per-class", synth.events_per_class, "Events per class and session")
        ->capture_default_str();
    synth_cmd->add_option("--snr", synth.snr, "Signal amplitude relative to unit noise (or inf)")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
    synth_cmd->add_option("--out", synth.out, "Output directory")->capture_default_str();

    mebm::TrainOptions train;
    std::uint64_t train_seed = 0;
    std::filesystem::path train_manifest, train_out;
    auto* train_cmd = app.add_subcommand("train", "Train one model");
    train_cmd->add_option("--config", train.config, "JSON run configuration");
    auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "Training seed (overrides config)");
    auto* train_manifest_opt = train_cmd->add_option("--manifest", train_manifest, "Dataset manifest (overrides config)");
    auto* train_out_opt = train_cmd->add_option("--out", train_out, "Output directory (overrides config)");

    mebm::AblateOptions ablate;
    std::string seeds;
    std::filesystem::path ablate_manifest, ablate_out;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train the ablation variants across seeds");
    ablate_cmd->add_option("--config", ablate.config, "JSON run configuration");
    auto* seeds_opt = ablate_cmd->add_option("--seeds", seeds, "Seed range \"0..5\" or list \"0,1,2\"");
    auto* ablate_manifest_opt = ablate_cmd->add_option("--manifest", ablate_manifest, "Dataset manifest");
    auto* ablate_out_opt = ablate_cmd->add_option("--out", ablate_out, "Output directory");

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (*synth_cmd) return mebm::cmd_synth(synth);
    if (*train_cmd) {
        if (*train_seed_opt) train.seed = train_seed;
        if (*train_manifest_opt) train.manifest = train_manifest;
        if (*train_out_opt) train.out = train_out;
        return mebm::cmd_train(train);
    }
    if (*ablate_cmd) {
        if (*seeds_opt) ablate.seeds = seeds;
        if (*ablate_manifest_opt) ablate.manifest = ablate_manifest;
        if (*ablate_out_opt) ablate.out = ablate_out;
        return mebm::cmd_ablate(ablate);
    }
    if (*gradcheck_cmd) return mebm::cmd_gradcheck();
    return 2;
}
