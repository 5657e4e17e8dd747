#include "gavatar/eval.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "gavatar/metrics.hpp"

namespace gavatar {

using nlohmann::json;

EvalReport evaluate(Trainer& trainer, const Dataset& data, const std::string& protocol) {
    trainer.attach_dataset(data);
    std::vector<std::pair<int, int>> jobs; // (t, view)
    std::vector<int> train_views;
    for (int v = 0; v < data.views(); ++v)
        if (v != data.heldout_view) train_views.push_back(v);

    if (protocol == "novel_view") {
        for (int t : data.train_t) jobs.emplace_back(t, data.heldout_view);
    } else if (protocol == "self_reenact") {
        for (int t : data.heldout_t)
            for (int v : train_views) jobs.emplace_back(t, v);
    } else if (protocol == "self_reenact_novel_view") {
        for (int t : data.heldout_t) jobs.emplace_back(t, data.heldout_view);
    } else {
        throw ValidationError("unknown protocol: " + protocol);
    }
    if (jobs.empty()) throw ValidationError("protocol " + protocol + " selects no frames");

    EvalReport rep;
    rep.protocol = protocol;
    rep.config_echo = trainer.config().to_json();
    rep.frames.resize(jobs.size());
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        auto [t, v] = jobs[i];
        Image rendered = trainer.render_view(t, v);
        const Image& target = data.frames[t][v];
        rep.frames[i] = {t, v, psnr(rendered, target), ssim(rendered, target)};
    }
    for (const FrameEval& f : rep.frames) {
        rep.mean_psnr += f.psnr;
        rep.mean_ssim += f.ssim;
    }
    rep.mean_psnr /= static_cast<double>(rep.frames.size());
    rep.mean_ssim /= static_cast<double>(rep.frames.size());
    return rep;
}

std::string EvalReport::to_json() const {
    json j;
    j["protocol"] = protocol;
    j["lpips"] = "unsupported";
    j["mean_psnr"] = mean_psnr;
    j["mean_ssim"] = mean_ssim;
    j["frames"] = json::array();
    for (const FrameEval& f : frames)
        j["frames"].push_back({{"t", f.t}, {"view", f.view}, {"psnr", f.psnr}, {"ssim", f.ssim}});
    j["config"] = json::parse(config_echo);
    return j.dump(2);
}

std::string EvalReport::to_csv() const {
    std::string out = "t,view,psnr,ssim\n";
    char buf[128];
    for (const FrameEval& f : frames) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g\n", f.t, f.view, f.psnr, f.ssim);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "mean,,%.17g,%.17g\n", mean_psnr, mean_ssim);
    out += buf;
    return out;
}

void write_report(const std::string& json_path, const EvalReport& report) {
    {
        std::ofstream out(json_path);
        if (!out) throw ValidationError("cannot write report: " + json_path);
        out << report.to_json() << "\n";
    }
    std::filesystem::path csv(json_path);
    csv.replace_extension(".csv");
    std::ofstream out(csv);
    if (!out) throw ValidationError("cannot write report CSV: " + csv.string());
    out << report.to_csv();
}

} // namespace gavatar
