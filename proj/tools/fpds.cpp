// Copyright 2026 The fpds authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpds/pipeline.hpp"

namespace {

// Exit codes: 0 ok, 2 config/usage, 3 data, 4 classifier non-convergence
// (outputs are still written in the last case).
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNonConverged = 4;

}  // namespace

namespace {

int run(int argc, char** argv) {
    CLI::App app{"fpds: multi-scale metabolism-trajectory scoring pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::optional<uint64_t> seed;
    std::optional<int> jobs;
    app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "override a config key, e.g. --set ensemble.F=20");
    app.add_option("--seed", seed, "override the master seed");
    app.add_option("--jobs", jobs, "worker threads for extraction/training");

    auto* c_stratify = app.add_subcommand("stratify", "assign strata to every image");
    auto* c_extract = app.add_subcommand("extract", "extract multi-scale SUVR features");
    auto* c_train = app.add_subcommand("train", "train the subagging ensemble");
    auto* c_score = app.add_subcommand("score", "compute scores (out-of-bag for training images)");
    auto* c_evaluate = app.add_subcommand("evaluate", "emit the report files");
    auto* c_phantom = app.add_subcommand("phantom", "generate a synthetic cohort");
    auto* c_run_all = app.add_subcommand("run-all", "run the full pipeline");
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();  // global flags after the verb

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (seed) sets.push_back("seed=" + std::to_string(*seed));
        if (jobs) sets.push_back("jobs=" + std::to_string(*jobs));
        fpds::PipelineConfig config = config_path.empty()
                                          ? fpds::make_config(nlohmann::json::object(), sets)
                                          : fpds::load_config(config_path, sets);

        if (c_stratify->parsed()) {
            auto r = fpds::cmd_stratify(config);
            std::cout << "stratified " << r.n_images << " images, " << r.n_excluded
                      << " subjects excluded\n";
        } else if (c_extract->parsed()) {
            auto r = fpds::cmd_extract(config);
            std::cout << "extracted " << r.n_extracted << " images ("
                      << (r.cache_hit ? "warm" : "cold") << " parcellation cache), "
                      << r.n_failed << " failed\n";
            if (r.n_extracted == 0) return kExitData;
        } else if (c_train->parsed()) {
            auto r = fpds::cmd_train(config);
            std::cout << "trained " << r.n_classifiers << " classifiers on "
                      << r.n_training_images << " images\n";
            if (!r.all_converged) {
                std::cerr << "warning: some classifiers did not converge (see training_log.csv)\n";
                return kExitNonConverged;
            }
        } else if (c_score->parsed()) {
            auto r = fpds::cmd_score(config);
            std::cout << "scored " << r.n_scored << " images (" << r.n_oob << " out-of-bag, "
                      << r.n_skipped << " without features)\n";
        } else if (c_evaluate->parsed()) {
            auto r = fpds::cmd_evaluate(config);
            std::cout << "wrote " << r.n_report_files << " report files";
            if (r.validation_auc) std::cout << ", validation auc " << *r.validation_auc;
            std::cout << "\n";
        } else if (c_phantom->parsed()) {
            auto r = fpds::cmd_phantom(config);
            std::cout << "generated " << r.n_images << " phantom images under "
                      << r.cohort_csv.parent_path().string() << "\n";
        } else if (c_run_all->parsed()) {
            auto r = fpds::run_all(config);
            std::cout << "pipeline complete";
            if (r.validation_auc) std::cout << ", validation auc " << *r.validation_auc;
            std::cout << "\n";
            if (!r.all_converged) {
                std::cerr << "warning: some classifiers did not converge (see training_log.csv)\n";
                return kExitNonConverged;
            }
        }
    } catch (const fpds::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const fpds::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
