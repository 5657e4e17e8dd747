#pragma once

#include <string>
#include <vector>

#include "gavatar/trainer.hpp"

namespace gavatar {

struct FrameEval {
    int t = 0, view = 0;
    double psnr = 0, ssim = 0;
};

struct EvalReport {
    std::string protocol;
    std::vector<FrameEval> frames;
    double mean_psnr = 0, mean_ssim = 0;
    std::string config_echo; // trainer config JSON

    std::string to_json() const;
    std::string to_csv() const;
};

// Protocols: novel_view (training timestamps, held-out view), self_reenact
// (held-out timestamps, training views), self_reenact_novel_view (held-out
// timestamps, held-out view).
EvalReport evaluate(Trainer& trainer, const Dataset& data, const std::string& protocol);

// Writes report JSON at json_path and the frame table CSV next to it
// (extension swapped to .csv).
void write_report(const std::string& json_path, const EvalReport& report);

} // namespace gavatar
