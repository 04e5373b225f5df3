#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hetmeta/error.hpp"
#include "hetmeta/gradcheck.hpp"
#include "hetmeta/htfs.hpp"
#include "hetmeta/log.hpp"
#include "hetmeta/metrics.hpp"
#include "hetmeta/nn.hpp"
#include "hetmeta/params.hpp"

namespace hetmeta::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
    if (model != "hetmaml" && model != "maml" && model != "multi-maml-bf") {
        throw ValueError("config: unknown model '" + model + "'");
    }
    if (dataset_path.empty() == !synthetic.enabled) {
        throw ValueError("config: exactly one of data.path / synthetic must be set");
    }
    if (epsilon <= 0.0) throw ValueError("config: epsilon must be positive");
    train.validate();
}

std::vector<ConfigVector> parse_type_masks(const std::vector<std::string>& labels,
                                           std::size_t modality_count) {
    std::vector<ConfigVector> masks;
    for (const std::string& label : labels) {
        ConfigVector mask(modality_count, 0);
        std::size_t pos = 0;
        while (pos < label.size()) {
            std::size_t plus = label.find('+', pos);
            if (plus == std::string::npos) plus = label.size();
            const std::string tok = label.substr(pos, plus - pos);
            if (tok.size() < 2 || (tok[0] != 'X' && tok[0] != 'x')) {
                throw ValueError("types: expected X<i> tokens, got '" + tok + "'");
            }
            std::size_t idx = 0;
            try {
                idx = std::stoul(tok.substr(1));
            } catch (const std::exception&) {
                throw ValueError("types: expected X<i> tokens, got '" + tok + "'");
            }
            if (idx < 1 || idx > modality_count) {
                throw ValueError("types: modality " + tok + " out of range for M = " +
                                 std::to_string(modality_count));
            }
            mask[idx - 1] = 1;
            pos = plus + 1;
        }
        masks.push_back(std::move(mask));
    }
    return masks;
}

void apply_config_file(const std::string& path, ExperimentConfig& cfg) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw IoError("config: malformed JSON in " + path + ": " + e.what());
    }

    try {
        if (j.contains("model")) cfg.model = j["model"].get<std::string>();
        if (j.contains("dims")) {
            const auto& d = j["dims"];
            if (d.contains("f1")) cfg.f1 = d["f1"].get<std::size_t>();
            if (d.contains("f2")) cfg.f2 = d["f2"].get<std::size_t>();
            if (d.contains("f3")) cfg.f3 = d["f3"].get<std::size_t>();
        }
        if (j.contains("episode")) {
            const auto& e = j["episode"];
            if (e.contains("n_way")) cfg.n_way = e["n_way"].get<std::size_t>();
            if (e.contains("k_shot")) cfg.k_shot = e["k_shot"].get<std::size_t>();
            if (e.contains("k_query")) cfg.k_query = e["k_query"].get<std::size_t>();
        }
        if (j.contains("epsilon")) cfg.epsilon = j["epsilon"].get<double>();
        if (j.contains("train")) {
            const auto& t = j["train"];
            if (t.contains("alpha")) cfg.train.alpha = t["alpha"].get<double>();
            if (t.contains("beta")) cfg.train.beta = t["beta"].get<double>();
            if (t.contains("inner_steps")) {
                cfg.train.inner_steps = t["inner_steps"].get<std::size_t>();
            }
            if (t.contains("meta_batch")) {
                cfg.train.meta_batch = t["meta_batch"].get<std::size_t>();
            }
            if (t.contains("iterations")) {
                cfg.train.iterations = t["iterations"].get<std::size_t>();
            }
            if (t.contains("second_order")) {
                cfg.train.second_order = t["second_order"].get<bool>();
            }
            if (t.contains("adaptive")) cfg.train.adaptive = t["adaptive"].get<bool>();
            if (t.contains("workers")) cfg.train.workers = t["workers"].get<std::size_t>();
            if (t.contains("mm_iterations_per_type")) {
                cfg.mm_iterations_per_type = t["mm_iterations_per_type"].get<std::size_t>();
            }
        }
        if (j.contains("data") && j["data"].contains("path")) {
            cfg.dataset_path = j["data"]["path"].get<std::string>();
        }
        if (j.contains("synthetic")) {
            const auto& s = j["synthetic"];
            cfg.synthetic.enabled = true;
            if (s.contains("classes")) {
                cfg.synthetic.classes = s["classes"].get<std::size_t>();
            }
            if (s.contains("modality_dims")) {
                cfg.synthetic.modality_dims =
                    s["modality_dims"].get<std::vector<std::size_t>>();
            }
            if (s.contains("types")) {
                cfg.synthetic.types = s["types"].get<std::vector<std::string>>();
            }
            if (s.contains("separation")) {
                cfg.synthetic.separation = s["separation"].get<double>();
            }
            if (s.contains("noise")) cfg.synthetic.noise = s["noise"].get<double>();
            if (s.contains("shared_latent")) {
                cfg.synthetic.shared_latent = s["shared_latent"].get<bool>();
            }
            if (s.contains("type_weights")) {
                cfg.synthetic.type_weights = s["type_weights"].get<std::vector<double>>();
            }
        }
    } catch (const json::exception& e) {
        throw IoError("config: bad value in " + path + ": " + e.what());
    }
}

namespace {

tasks::HTDSpec synthetic_spec(const ExperimentConfig& cfg) {
    tasks::HTDSpec spec;
    spec.modality_count = cfg.synthetic.modality_dims.size();
    spec.modality_dims = cfg.synthetic.modality_dims;
    spec.task_types = parse_type_masks(cfg.synthetic.types, spec.modality_count);
    spec.type_weights = cfg.synthetic.type_weights;
    spec.n_way = cfg.n_way;
    spec.k_shot = cfg.k_shot;
    spec.k_query = cfg.k_query;
    spec.validate();
    return spec;
}

nn::ModelDims model_dims(const ExperimentConfig& cfg, const tasks::HTDSpec& spec) {
    nn::ModelDims dims;
    dims.modality_count = spec.modality_count;
    dims.modality_dims = spec.modality_dims;
    dims.f1 = cfg.f1;
    dims.f2 = cfg.f2;
    dims.f3 = cfg.f3;
    dims.n_way = spec.n_way;
    return dims;
}

std::vector<tasks::TaskInstance> tasks_of_type(const std::vector<tasks::TaskInstance>& all,
                                               std::size_t type_id) {
    std::vector<tasks::TaskInstance> out;
    for (const auto& t : all) {
        if (t.type_id == type_id) out.push_back(t);
    }
    if (out.empty()) {
        throw ValueError("dataset has no tasks of type " + std::to_string(type_id));
    }
    return out;
}

struct GenDataArgs {
    std::size_t classes = 40;
    std::size_t modalities = 2;
    std::vector<std::size_t> dims;
    std::vector<std::string> types = {"X1", "X2", "X1+X2"};
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t k_query = 12;
    std::size_t n_tasks = 200;
    std::size_t n_test_tasks = 0; // 0 = n_tasks / 4
    double separation = 4.0;
    double noise = 1.0;
    double epsilon = 1e-1;
    bool shared_latent = false;
};

int cmd_gen_data(const GenDataArgs& args, std::uint64_t seed, const std::string& out_dir) {
    std::vector<std::size_t> dims = args.dims;
    if (dims.empty()) dims.assign(args.modalities, 16);
    if (dims.size() != args.modalities) {
        throw ValueError("gen-data: --dims must list one dimension per modality");
    }

    tasks::HTDSpec spec;
    spec.modality_count = args.modalities;
    spec.modality_dims = dims;
    spec.task_types = parse_type_masks(args.types, args.modalities);
    spec.n_way = args.n_way;
    spec.k_shot = args.k_shot;
    spec.k_query = args.k_query;
    spec.validate();

    Rng bank_rng(derive_seed(seed, 1));
    const tasks::ClassBank bank = tasks::make_class_bank(
        args.modalities, dims, args.classes, args.separation, bank_rng, args.shared_latent);

    const std::size_t n_test = args.n_test_tasks ? args.n_test_tasks
                                                 : std::max<std::size_t>(1, args.n_tasks / 4);
    Rng train_rng(derive_seed(seed, 2));
    Rng test_rng(derive_seed(seed, 3));
    std::vector<tasks::TaskInstance> train_tasks, test_tasks;
    train_tasks.reserve(args.n_tasks);
    for (std::size_t i = 0; i < args.n_tasks; ++i) {
        train_tasks.push_back(tasks::sample_synthetic_task(spec, bank, train_rng, false,
                                                           args.noise, args.epsilon));
    }
    test_tasks.reserve(n_test);
    for (std::size_t i = 0; i < n_test; ++i) {
        test_tasks.push_back(tasks::sample_synthetic_task(spec, bank, test_rng, true,
                                                          args.noise, args.epsilon));
    }

    const fs::path out(out_dir);
    htfs::save_meta_dataset(out / "train", spec, train_tasks);
    htfs::save_meta_dataset(out / "test", spec, test_tasks);

    std::cout << "class split: " << bank.train_classes.size() << "/"
              << bank.test_classes.size() << "\n";
    std::cout << "wrote " << train_tasks.size() << " train tasks to "
              << (out / "train").string() << "\n";
    std::cout << "wrote " << test_tasks.size() << " test tasks to " << (out / "test").string()
              << "\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg_in, std::uint64_t seed) {
    ExperimentConfig cfg = cfg_in;
    cfg.train.seed = seed;
    cfg.train.config_epsilon = cfg.epsilon;
    cfg.validate();

    const fs::path out(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);

    tasks::HTDSpec spec;
    std::vector<tasks::TaskInstance> dataset_tasks;
    tasks::ClassBank bank;
    if (!cfg.dataset_path.empty()) {
        std::tie(spec, dataset_tasks) = htfs::load_meta_dataset(cfg.dataset_path, cfg.epsilon);
    } else {
        spec = synthetic_spec(cfg);
        Rng bank_rng(derive_seed(seed, 1));
        bank = tasks::make_class_bank(spec.modality_count, spec.modality_dims,
                                      cfg.synthetic.classes, cfg.synthetic.separation,
                                      bank_rng, cfg.synthetic.shared_latent);
    }
    const std::size_t n_types = spec.type_count();

    auto make_source = [&](std::uint64_t stream) -> std::unique_ptr<tasks::TaskSource> {
        if (!cfg.dataset_path.empty()) {
            return std::make_unique<tasks::FixedTaskSource>(dataset_tasks);
        }
        return std::make_unique<tasks::SyntheticTaskSource>(
            spec, bank, derive_seed(seed, stream), false, cfg.synthetic.noise, cfg.epsilon);
    };

    if (cfg.model == "multi-maml-bf") {
        maml::MultiMamlBF mm =
            maml::multi_maml_bf_init(spec, cfg.f1, cfg.f2, cfg.f3, derive_seed(seed, 0));
        std::vector<std::unique_ptr<tasks::TaskSource>> streams;
        for (std::size_t r = 0; r < n_types; ++r) {
            if (!cfg.dataset_path.empty()) {
                streams.push_back(std::make_unique<tasks::FixedTaskSource>(
                    tasks_of_type(dataset_tasks, r)));
            } else {
                streams.push_back(std::make_unique<tasks::FilteredTaskSource>(
                    make_source(100 + r), r));
            }
        }
        const std::size_t per_type =
            cfg.mm_iterations_per_type
                ? cfg.mm_iterations_per_type
                : std::max<std::size_t>(1, cfg.train.iterations / n_types);
        const std::vector<maml::TrainResult> logs =
            maml::multi_maml_bf_train(mm, streams, cfg.train, per_type);
        write_metrics_csv(out / "metrics.csv", merge_multi_logs(logs, n_types), n_types);
        for (std::size_t r = 0; r < mm.models.size(); ++r) {
            save_checkpoint(out / ("model.type" + std::to_string(r) + ".hmck"),
                            mm.models[r]->params());
        }
        log_info("multi-maml-bf: trained " + std::to_string(mm.models.size()) +
                 " per-type models, " + std::to_string(per_type) + " iterations each (" +
                 std::to_string(mm.total_elements()) + " parameters total)");
        return 0;
    }

    std::unique_ptr<maml::EpisodicModel> model;
    if (cfg.model == "hetmaml") {
        model = std::make_unique<maml::HetMamlModel>(model_dims(cfg, spec),
                                                     derive_seed(seed, 0));
    } else {
        model = std::make_unique<maml::PaddedMamlModel>(spec.modality_dims, cfg.f1, cfg.f2,
                                                        spec.n_way, derive_seed(seed, 0));
    }

    auto source = make_source(2);
    const maml::TrainResult result = maml::meta_train(*model, *source, cfg.train, n_types);
    write_metrics_csv(out / "metrics.csv", result.log, n_types);
    save_checkpoint(out / "model.hmck", model->params());

    std::string summary = cfg.model + ": " + std::to_string(cfg.train.iterations) +
                          " iterations, " + std::to_string(model->params().total_elements()) +
                          " parameters";
    if (!result.log.empty()) {
        summary += ", final mean query acc " + format_double(result.log.back().mean_query_acc);
    }
    if (result.skipped_tasks) {
        summary += ", skipped " + std::to_string(result.skipped_tasks) + " degenerate tasks";
    }
    log_info(summary);
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg_in, std::uint64_t seed, const std::string& checkpoint,
             const std::string& data_path) {
    ExperimentConfig cfg = cfg_in;
    cfg.train.seed = seed;
    cfg.train.config_epsilon = cfg.epsilon;
    if (checkpoint.empty()) throw ValueError("eval: --checkpoint is required");
    if (data_path.empty()) throw ValueError("eval: --data is required");

    const auto [spec, test_tasks] = htfs::load_meta_dataset(data_path, cfg.epsilon);
    const std::size_t n_types = spec.type_count();

    const fs::path out(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);

    maml::AdaptationTrace trace;
    if (cfg.model == "multi-maml-bf") {
        maml::MultiMamlBF mm =
            maml::multi_maml_bf_init(spec, cfg.f1, cfg.f2, cfg.f3, derive_seed(seed, 0));
        for (std::size_t r = 0; r < mm.models.size(); ++r) {
            mm.models[r]->set_params(
                load_checkpoint(checkpoint + ".type" + std::to_string(r) + ".hmck"));
        }
        trace = maml::evaluate_multi(mm, test_tasks, cfg.train);
    } else if (cfg.model == "hetmaml") {
        maml::HetMamlModel model(model_dims(cfg, spec), derive_seed(seed, 0));
        model.set_params(load_checkpoint(checkpoint));
        trace = maml::evaluate(model, test_tasks, cfg.train);
    } else {
        maml::PaddedMamlModel model(spec.modality_dims, cfg.f1, cfg.f2, spec.n_way,
                                    derive_seed(seed, 0));
        model.set_params(load_checkpoint(checkpoint));
        trace = maml::evaluate(model, test_tasks, cfg.train);
    }

    write_adaptation_csv(out / "adaptation_curve.csv", trace, n_types);
    const std::vector<double> acc = trace.mean_acc();
    std::cout << "evaluated " << trace.tasks.size() << " tasks; step-0 acc "
              << format_double(acc.front()) << ", step-" << (acc.size() - 1) << " acc "
              << format_double(acc.back()) << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& only, std::size_t seeds) {
    const std::vector<gradcheck::CheckResult> results = gradcheck::run_checks(only, seeds);
    bool all_pass = true;
    std::printf("%-14s %12s %10s %7s %8s\n", "check", "max_rel_err", "tolerance", "seeds",
                "result");
    for (const auto& r : results) {
        std::printf("%-14s %12.3e %10.0e %7zu %8s (%.1fs)\n", r.name.c_str(), r.max_rel_err,
                    r.tolerance, r.seeds, r.pass ? "PASS" : "FAIL", r.seconds);
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 3;
}

} // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"hetmeta: few-shot meta-learning over heterogeneous task distributions"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    app.add_option("--config", config_path, "JSON experiment config")->expected(1);
    app.add_option("--seed", seed, "master seed");
    app.add_option("--out", out_dir, "output directory");

    // gen-data
    GenDataArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic HTFS dataset");
    gen_cmd->add_option("--classes", gen.classes, "total classes (3:1 train/test split)");
    gen_cmd->add_option("--modalities", gen.modalities, "modality count M");
    gen_cmd->add_option("--dims", gen.dims, "per-modality dimensions")->delimiter(',');
    gen_cmd->add_option("--types", gen.types, "task types, e.g. X1,X2,X1+X2")->delimiter(',');
    gen_cmd->add_option("--n-way", gen.n_way, "classes per episode");
    gen_cmd->add_option("--k-shot", gen.k_shot, "support samples per class");
    gen_cmd->add_option("--k-query", gen.k_query, "query samples per class");
    gen_cmd->add_option("--tasks", gen.n_tasks, "meta-train task count");
    gen_cmd->add_option("--test-tasks", gen.n_test_tasks, "meta-test task count");
    gen_cmd->add_option("--separation", gen.separation, "class prototype spread");
    gen_cmd->add_option("--noise", gen.noise, "within-class noise sigma");
    gen_cmd->add_option("--epsilon", gen.epsilon, "config-vector threshold");
    gen_cmd->add_flag("--shared-latent", gen.shared_latent,
                      "derive modalities from one latent class vector");

    // train
    std::string model_flag;
    std::size_t iterations_flag = 0, inner_steps_flag = 0, meta_batch_flag = 0,
                workers_flag = 0, mm_per_type_flag = 0;
    double alpha_flag = 0.0, beta_flag = 0.0;
    bool first_order = false;
    bool adaptive_flag = false;
    CLI::App* train_cmd = app.add_subcommand("train", "meta-train a model");
    train_cmd->add_option("--model", model_flag, "hetmaml | maml | multi-maml-bf");
    train_cmd->add_option("--iterations", iterations_flag, "outer-loop steps");
    train_cmd->add_option("--inner-steps", inner_steps_flag, "inner-loop steps");
    train_cmd->add_option("--alpha", alpha_flag, "inner learning rate");
    train_cmd->add_option("--beta", beta_flag, "outer learning rate");
    train_cmd->add_option("--meta-batch", meta_batch_flag, "tasks per outer step");
    train_cmd->add_flag("--first-order", first_order, "first-order meta-gradients");
    train_cmd->add_flag("--adaptive", adaptive_flag, "Adam outer updates instead of SGD");
    train_cmd->add_option("--workers", workers_flag, "parallel per-task adaptation");
    train_cmd->add_option("--mm-iterations-per-type", mm_per_type_flag,
                          "multi-maml iterations per type (default: iterations / M')");

    // eval
    std::string eval_checkpoint, eval_data, eval_model;
    std::size_t eval_inner_steps = 0;
    CLI::App* eval_cmd = app.add_subcommand("eval", "adaptation-speed evaluation");
    eval_cmd->add_option("--model", eval_model, "hetmaml | maml | multi-maml-bf");
    eval_cmd->add_option("--checkpoint", eval_checkpoint,
                         "checkpoint file (multi-maml-bf: path prefix)");
    eval_cmd->add_option("--data", eval_data, "meta-test manifest.json");
    eval_cmd->add_option("--inner-steps", eval_inner_steps, "adaptation steps to trace");

    // gradcheck
    std::string only;
    std::size_t check_seeds = 20;
    CLI::App* check_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    check_cmd->add_option("--only", only, "substring filter for check names");
    check_cmd->add_option("--seeds", check_seeds, "random seeds per check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        ExperimentConfig cfg;
        if (!config_path.empty()) apply_config_file(config_path, cfg);
        if (!out_dir.empty()) cfg.out_dir = out_dir;

        if (gen_cmd->parsed()) {
            return cmd_gen_data(gen, seed, out_dir.empty() ? "." : out_dir);
        }
        if (train_cmd->parsed()) {
            if (!model_flag.empty()) cfg.model = model_flag;
            if (train_cmd->count("--iterations")) cfg.train.iterations = iterations_flag;
            if (train_cmd->count("--inner-steps")) cfg.train.inner_steps = inner_steps_flag;
            if (train_cmd->count("--alpha")) cfg.train.alpha = alpha_flag;
            if (train_cmd->count("--beta")) cfg.train.beta = beta_flag;
            if (train_cmd->count("--meta-batch")) cfg.train.meta_batch = meta_batch_flag;
            if (first_order) cfg.train.second_order = false;
            if (adaptive_flag) cfg.train.adaptive = true;
            if (train_cmd->count("--workers")) cfg.train.workers = workers_flag;
            if (train_cmd->count("--mm-iterations-per-type")) {
                cfg.mm_iterations_per_type = mm_per_type_flag;
            }
            return cmd_train(cfg, seed);
        }
        if (eval_cmd->parsed()) {
            if (!eval_model.empty()) cfg.model = eval_model;
            if (eval_cmd->count("--inner-steps")) cfg.train.inner_steps = eval_inner_steps;
            return cmd_eval(cfg, seed, eval_checkpoint, eval_data);
        }
        if (check_cmd->parsed()) {
            return cmd_gradcheck(only, check_seeds);
        }
    } catch (const ValueError& e) {
        log_error(e.what());
        return 2;
    } catch (const ShapeError& e) {
        log_error(e.what());
        return 2;
    } catch (const IoError& e) {
        log_error(e.what());
        return 2;
    }
    return 0;
}

} // namespace hetmeta::cli
