#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "gavatar/eval.hpp"
#include "gavatar/trainer.hpp"

using namespace gavatar;

namespace {

struct SeedOpt {
    uint64_t value = 0;
    bool set = false;
};

void add_seed(CLI::App* cmd, SeedOpt& seed) {
    cmd->add_option_function<uint64_t>(
        "--seed",
        [&seed](uint64_t v) {
            seed.value = v;
            seed.set = true;
        },
        "override the RNG seed");
}

int run(int argc, char** argv) {
    CLI::App app{"mesh-bound gaussian head avatars"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string spec_path, gen_out;
    SeedOpt gen_seed;
    gen->add_option("--spec", spec_path, "scene spec JSON")->required();
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    add_seed(gen, gen_seed);

    // train
    auto* train = app.add_subcommand("train", "optimize an avatar on a dataset");
    std::string train_data, train_cfg, train_out, ablation, train_log;
    SeedOpt train_seed;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--config", train_cfg, "train config JSON")->required();
    train->add_option("--out", train_out, "output checkpoint path")->required();
    train->add_option("--ablation", ablation,
                      "freeze|single-view|multi-view-o|multi-view-m|multi-view-t|full");
    train->add_option("--log", train_log, "write the loss CSV here instead of stdout");
    add_seed(train, train_seed);

    // render
    auto* render = app.add_subcommand("render", "render one timestamp/view from a checkpoint");
    std::string render_ckpt, render_out, render_data;
    int render_t = 0, render_view = 0;
    SeedOpt render_seed;
    render->add_option("--ckpt", render_ckpt, "checkpoint path")->required();
    render->add_option("--t", render_t, "timestamp index")->required();
    render->add_option("--view", render_view, "view index")->required();
    render->add_option("--out", render_out, "output PNG path")->required();
    render->add_option("--data", render_data, "dataset directory (needed for untrained timestamps)");
    add_seed(render, render_seed);

    // reenact
    auto* reenact = app.add_subcommand("reenact", "drive the avatar with external parameters");
    std::string re_ckpt, re_driving, re_cams, re_out;
    SeedOpt re_seed;
    reenact->add_option("--ckpt", re_ckpt, "checkpoint path")->required();
    reenact->add_option("--driving", re_driving, "driving parameter JSON (array)")->required();
    reenact->add_option("--cams", re_cams, "camera JSON (array)")->required();
    reenact->add_option("--out", re_out, "output directory")->required();
    add_seed(reenact, re_seed);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against a dataset");
    std::string ev_ckpt, ev_data, ev_protocol, ev_out;
    SeedOpt ev_seed;
    eval->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    eval->add_option("--data", ev_data, "dataset directory")->required();
    eval->add_option("--protocol", ev_protocol,
                     "novel_view|self_reenact|self_reenact_novel_view")->required();
    eval->add_option("--out", ev_out, "report JSON path (CSV written alongside)")->required();
    add_seed(eval, ev_seed);

    // inspect-bank
    auto* inspect = app.add_subcommand("inspect-bank", "print the expression bank contents");
    std::string in_ckpt;
    SeedOpt in_seed;
    inspect->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
    add_seed(inspect, in_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (*gen) {
        SceneSpec spec = SceneSpec::from_json_file(spec_path);
        if (gen_seed.set) spec.seed = gen_seed.value;
        spec.validate();
        write_dataset(gen_out, generate_scene(spec));
        std::cout << "dataset written to " << gen_out << "\n";
    } else if (*train) {
        TrainConfig cfg = TrainConfig::from_json_file(train_cfg);
        if (!ablation.empty()) cfg.apply_arm(ablation);
        if (train_seed.set) cfg.seed = train_seed.value;
        Dataset data = read_dataset(train_data);
        Trainer trainer(cfg, data);
        if (train_log.empty()) {
            trainer.run(&std::cout);
        } else {
            std::ofstream log(train_log);
            if (!log) throw ValidationError("cannot write log: " + train_log);
            trainer.run(&log);
        }
        trainer.save(train_out);
        std::cout << "checkpoint written to " << train_out << "\n";
    } else if (*render) {
        Trainer trainer = Trainer::load(render_ckpt);
        Dataset data;
        if (!render_data.empty()) {
            data = read_dataset(render_data);
            trainer.attach_dataset(data);
        }
        write_png(render_out, trainer.render_view(render_t, render_view));
        std::cout << "image written to " << render_out << "\n";
    } else if (*reenact) {
        Trainer trainer = Trainer::load(re_ckpt);
        auto driving = read_params_json(re_driving);
        auto cams = read_cameras_json(re_cams);
        if (driving.empty() || cams.empty())
            throw ValidationError("reenact needs at least one driving frame and one camera");
        auto images = trainer.reenact(driving, cams);
        std::filesystem::create_directories(re_out);
        char name[64];
        for (std::size_t i = 0; i < driving.size(); ++i)
            for (std::size_t c = 0; c < cams.size(); ++c) {
                std::snprintf(name, sizeof(name), "/t%03zu_c%02zu.png", i, c);
                write_png(re_out + name, images[i * cams.size() + c]);
            }
        std::cout << images.size() << " images written to " << re_out << "\n";
    } else if (*eval) {
        Trainer trainer = Trainer::load(ev_ckpt);
        Dataset data = read_dataset(ev_data);
        EvalReport report = evaluate(trainer, data, ev_protocol);
        write_report(ev_out, report);
        std::printf("%s: mean psnr %.4f dB, mean ssim %.6f over %zu frames\n", ev_protocol.c_str(),
                    report.mean_psnr, report.mean_ssim, report.frames.size());
    } else if (*inspect) {
        Trainer trainer = Trainer::load(in_ckpt);
        const ExpressionBank& bank = trainer.state().bank;
        std::printf("expression bank: %zu timestamps, %d views, %d coefficients\n",
                    bank.entries.size(), bank.view_count, bank.n_expr);
        for (const auto& [t, slots] : bank.entries) {
            Eigen::VectorXd mean = bank.mean(t);
            double var = 0;
            for (const auto& s : slots) var += (s - mean).squaredNorm();
            var /= static_cast<double>(slots.size()) * std::max(1, bank.n_expr);
            std::printf("t=%d  slot-mean norm %.6g  inter-view variance %.6g  mean [", t, mean.norm(),
                        var);
            for (Eigen::Index k = 0; k < mean.size(); ++k)
                std::printf("%s%.6g", k ? ", " : "", mean[k]);
            std::printf("]\n");
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
