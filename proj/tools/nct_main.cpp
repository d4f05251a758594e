#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nct/diffusion.hpp"
#include "nct/gradsuite.hpp"
#include "nct/metrics.hpp"
#include "nct/pairing.hpp"
#include "nct/runmeta.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string join_argv(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += " ";
        s += argv[i];
    }
    return s;
}

// Config precedence: CLI flag > config file > preset default. CLI11 tracks
// which options the user actually passed.
json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw nct::IoError("cannot open config file: " + path);
    return json::parse(f);
}

template <typename T>
void apply_config(const CLI::App* cmd, const json& cfg, const std::string& flag,
                  const std::string& key, T& value) {
    if (cmd->count(flag) == 0 && cfg.contains(key)) value = cfg.at(key).get<T>();
}

nct::DatasetManifest filter_split(const nct::DatasetManifest& m, const std::string& split) {
    if (split == "all") return m;
    nct::DatasetManifest out = m;
    out.records.clear();
    for (const auto& r : m.records)
        if (r.split == split) out.records.push_back(r);
    nct::check(!out.records.empty(), "no records with split '" + split + "'");
    return out;
}

int cmd_synth(const std::string& out_dir, int persons, int garments, const std::string& mode,
              uint64_t seed, int size, int k, const std::string& command) {
    nct::check(mode == "paired" || mode == "cross", "--mode must be paired or cross");
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/persons");
    fs::create_directories(out_dir + "/cards");
    fs::create_directories(out_dir + "/poses");
    nct::RngStream rng(seed, "world");
    nct::DatasetManifest m = nct::sample_world(rng, persons, garments, "paired_one_to_one");
    if (mode == "cross") {
        nct::RngStream xr(seed, "cross-pair");
        m = nct::cross_pair(m, std::min(k, garments), xr);
    }
    nct::save_manifest(out_dir + "/manifest.json", m);

    nct::RunMeta meta;
    meta.command = command;
    json cfg{{"persons", persons}, {"garments", garments}, {"mode", mode},
             {"seed", seed},       {"size", size},         {"k", k}};
    meta.config_json = cfg.dump();
    char name[128];
    for (size_t i = 0; i < m.records.size(); ++i) {
        const auto& rec = m.records[i];
        nct::ImageGrid img = nct::render_person(m.persons[static_cast<size_t>(rec.person)],
                                                m.garments[static_cast<size_t>(rec.garment)], size);
        std::snprintf(name, sizeof(name), "%s/persons/rec_%05zu.ppm", out_dir.c_str(), i);
        nct::write_ppm(name, img);
        meta.outputs[name] = nct::file_hash_hex(name);
    }
    for (size_t g = 0; g < m.garments.size(); ++g) {
        std::snprintf(name, sizeof(name), "%s/cards/garment_%04zu.ppm", out_dir.c_str(), g);
        nct::write_ppm(name, nct::render_garment_card(m.garments[g], size));
        meta.outputs[name] = nct::file_hash_hex(name);
    }
    for (size_t p = 0; p < m.persons.size(); ++p) {
        std::snprintf(name, sizeof(name), "%s/poses/person_%04zu.ppm", out_dir.c_str(), p);
        nct::write_ppm(name, nct::render_pose_map(m.persons[p].pose, size));
        meta.outputs[name] = nct::file_hash_hex(name);
    }
    meta.outputs[out_dir + "/manifest.json"] = nct::file_hash_hex(out_dir + "/manifest.json");
    nct::write_run_manifest(out_dir, meta);
    std::cout << "wrote " << m.records.size() << " records to " << out_dir << "\n";
    return 0;
}

int cmd_train(const nct::TrainConfig& cfg, const std::string& data_dir,
              const std::string& init_ckpt, const std::string& out_ckpt,
              const std::string& command) {
    nct::DatasetManifest data = nct::load_manifest(data_dir + "/manifest.json");
    auto result = nct::run_stage(cfg, data, init_ckpt, out_ckpt,
                                 [](const std::string& line) { std::cout << line << "\n"; });
    nct::RunMeta meta;
    meta.command = command;
    json j{{"stage", cfg.stage},   {"preset", cfg.preset}, {"lr", cfg.lr},
           {"weight_decay", cfg.weight_decay}, {"batch", cfg.batch}, {"steps", cfg.steps},
           {"cond_drop", cfg.cond_drop}, {"image_size", cfg.image_size}, {"seed", cfg.seed},
           {"allow_bias", cfg.allow_bias}};
    json losses = json::array();
    for (auto& [step, loss] : result.loss_log) losses.push_back({{"step", step}, {"loss", loss}});
    j["loss_log"] = losses;
    meta.config_json = j.dump();
    meta.inputs[data_dir + "/manifest.json"] = nct::file_hash_hex(data_dir + "/manifest.json");
    if (!init_ckpt.empty()) meta.inputs[init_ckpt] = nct::file_hash_hex(init_ckpt);
    meta.outputs[out_ckpt] = nct::file_hash_hex(out_ckpt);
    fs::path dir = fs::path(out_ckpt).parent_path();
    nct::write_run_manifest(dir.empty() ? "." : dir.string(), meta);
    std::cout << "checkpoint written to " << out_ckpt << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& data_dir, int garment_id,
               int pose_id, const std::string& prompt_str, int n, double guidance, uint64_t seed,
               int ddim_steps, const std::string& out_dir, const std::string& command) {
    nct::Checkpoint ckpt = nct::load_checkpoint(ckpt_path);
    nct::ModelSet models = nct::model_from_checkpoint(ckpt);
    nct::DatasetManifest data = nct::load_manifest(data_dir + "/manifest.json");
    nct::check(garment_id >= 0 && garment_id < static_cast<int>(data.garments.size()),
               "--garment-id out of range");
    nct::check(pose_id >= 0 && pose_id < static_cast<int>(data.persons.size()),
               "--pose-id out of range");
    const nct::PersonSpec& person = data.persons[static_cast<size_t>(pose_id)];

    nct::SampleRequest req;
    req.garment = data.garments[static_cast<size_t>(garment_id)];
    req.pose = person.pose;
    req.prompt = prompt_str.empty() ? nct::prompt_for_person(person)
                                    : nct::parse_prompt(prompt_str);
    std::vector<nct::SampleRequest> reqs(static_cast<size_t>(n), req);

    nct::SamplerConfig sampler;
    sampler.guidance = guidance;
    sampler.seed = seed;
    sampler.ddim_steps = ddim_steps;
    nct::NoiseSchedule sched = nct::NoiseSchedule::linear();
    std::vector<nct::ImageGrid> images = nct::ddim_sample(models, reqs, sampler, sched);

    fs::create_directories(out_dir);
    nct::RunMeta meta;
    meta.command = command;
    json cfg{{"ckpt", ckpt_path}, {"garment_id", garment_id}, {"pose_id", pose_id},
             {"prompt", prompt_str}, {"n", n}, {"guidance", guidance},
             {"seed", seed}, {"ddim_steps", ddim_steps}};
    meta.config_json = cfg.dump();
    meta.inputs[ckpt_path] = nct::file_hash_hex(ckpt_path);
    char name[128];
    for (size_t i = 0; i < images.size(); ++i) {
        std::snprintf(name, sizeof(name), "%s/sample_%03zu.ppm", out_dir.c_str(), i);
        nct::write_ppm(name, images[i]);
        meta.outputs[name] = nct::file_hash_hex(name);
    }
    nct::write_run_manifest(out_dir, meta);
    std::cout << "wrote " << images.size() << " samples to " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& variant, const std::string& out_path, const std::string& split,
             double guidance, uint64_t seed, const std::string& command) {
    nct::Checkpoint ckpt = nct::load_checkpoint(ckpt_path);
    nct::ModelSet models = nct::model_from_checkpoint(ckpt);
    nct::DatasetManifest data =
        filter_split(nct::load_manifest(data_dir + "/manifest.json"), split);
    nct::SamplerConfig sampler;
    sampler.guidance = guidance;
    sampler.seed = seed;
    nct::NoiseSchedule sched = nct::NoiseSchedule::linear();
    std::vector<nct::ImageGrid> images;
    nct::MetricsReport report = nct::evaluate_run(models, data, variant, sampler, sched, &images);
    {
        std::ofstream f(out_path);
        if (!f) throw nct::IoError("cannot write report: " + out_path);
        f << report.to_json() << "\n";
    }
    std::string sheet = out_path + ".sheet.ppm";
    nct::write_ppm(sheet, nct::contact_sheet(images, 10));
    nct::RunMeta meta;
    meta.command = command;
    json cfg{{"ckpt", ckpt_path}, {"variant", variant}, {"split", split},
             {"guidance", guidance}, {"seed", seed}};
    meta.config_json = cfg.dump();
    meta.inputs[ckpt_path] = nct::file_hash_hex(ckpt_path);
    meta.outputs[out_path] = nct::file_hash_hex(out_path);
    meta.outputs[sheet] = nct::file_hash_hex(sheet);
    fs::path dir = fs::path(out_path).parent_path();
    nct::write_run_manifest(dir.empty() ? "." : dir.string(), meta);
    std::cout << report.to_json() << "\n";
    return 0;
}

int cmd_bias_probe(const std::string& paired_ckpt, const std::string& cross_ckpt,
                   const std::string& data_dir, const std::string& out_path, uint64_t seed,
                   const std::string& command) {
    nct::Checkpoint pc = nct::load_checkpoint(paired_ckpt);
    nct::Checkpoint cc = nct::load_checkpoint(cross_ckpt);
    nct::ModelSet pm = nct::model_from_checkpoint(pc);
    nct::ModelSet cm = nct::model_from_checkpoint(cc);
    nct::DatasetManifest data = nct::load_manifest(data_dir + "/manifest.json");
    nct::SamplerConfig sampler;
    sampler.seed = seed;
    nct::NoiseSchedule sched = nct::NoiseSchedule::linear();
    std::vector<nct::ImageGrid> images;
    nct::BiasProbeReport report = nct::bias_probe(pm, cm, data, sampler, sched, 16, &images);
    {
        std::ofstream f(out_path);
        if (!f) throw nct::IoError("cannot write report: " + out_path);
        f << report.to_json() << "\n";
    }
    std::string sheet = out_path + ".sheet.ppm";
    nct::write_ppm(sheet, nct::contact_sheet(images, 8));
    nct::RunMeta meta;
    meta.command = command;
    json cfg{{"paired", paired_ckpt}, {"cross", cross_ckpt}, {"seed", seed}};
    meta.config_json = cfg.dump();
    meta.inputs[paired_ckpt] = nct::file_hash_hex(paired_ckpt);
    meta.inputs[cross_ckpt] = nct::file_hash_hex(cross_ckpt);
    meta.outputs[out_path] = nct::file_hash_hex(out_path);
    fs::path dir = fs::path(out_path).parent_path();
    nct::write_run_manifest(dir.empty() ? "." : dir.string(), meta);
    std::cout << report.to_json() << "\n";
    return 0;
}

int cmd_gradcheck() {
    auto entries = nct::run_gradient_suite();
    bool all_pass = true;
    for (const auto& e : entries) {
        std::printf("%-28s max_rel_err %.3e  (threshold %.0e)  %s\n", e.name.c_str(),
                    e.max_rel_err, e.threshold, e.pass() ? "ok" : "FAIL");
        all_pass = all_pass && e.pass();
    }
    if (!all_pass) {
        std::cerr << "gradcheck: at least one op exceeded its threshold\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neural clothing tryer: synthetic customized try-on testbed"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags take precedence)");
    std::string command = join_argv(argc, argv);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic try-on dataset");
    std::string s_out, s_mode = "paired";
    int s_persons = 64, s_garments = 64, s_size = 32, s_k = nct::kDefaultCrossPairK;
    uint64_t s_seed = 0;
    synth->add_option("--out", s_out, "output directory")->required();
    synth->add_option("--persons", s_persons, "number of persons");
    synth->add_option("--garments", s_garments, "number of garments");
    synth->add_option("--mode", s_mode, "paired|cross");
    synth->add_option("--seed", s_seed, "world seed");
    synth->add_option("--size", s_size, "render size (32 or 64)");
    synth->add_option("--k", s_k, "garments per person in cross mode");

    // train
    auto* train = app.add_subcommand("train", "train one stage");
    std::string t_stage, t_data, t_preset = "desk", t_out, t_init;
    nct::TrainConfig tc;
    bool t_allow_bias = false;
    train->add_option("--stage", t_stage, "base|pose|garment")->required();
    train->add_option("--data", t_data, "dataset directory")->required();
    train->add_option("--preset", t_preset, "desk|paper");
    train->add_option("--out", t_out, "output checkpoint")->required();
    train->add_option("--init", t_init, "previous-stage checkpoint");
    train->add_flag("--allow-bias", t_allow_bias,
                    "permit garment training on a paired_one_to_one dataset");
    double t_lr = -1, t_wd = -1, t_drop = -1;
    int t_steps = -1, t_batch = -1, t_size = -1;
    uint64_t t_seed = 0;
    train->add_option("--lr", t_lr, "learning rate");
    train->add_option("--weight-decay", t_wd, "weight decay");
    train->add_option("--steps", t_steps, "training steps");
    train->add_option("--batch", t_batch, "batch size");
    train->add_option("--cond-drop", t_drop, "condition drop probability");
    train->add_option("--size", t_size, "image size");
    train->add_option("--seed", t_seed, "training seed");

    // sample
    auto* sample = app.add_subcommand("sample", "generate try-on samples");
    std::string m_ckpt, m_data, m_prompt, m_out;
    int m_garment = 0, m_pose = 0, m_n = 1, m_steps = 50;
    double m_guidance = 3.0;
    uint64_t m_seed = 0;
    sample->add_option("--ckpt", m_ckpt)->required();
    sample->add_option("--data", m_data, "dataset directory with the garment/pose catalog")
        ->required();
    sample->add_option("--garment-id", m_garment)->required();
    sample->add_option("--pose-id", m_pose)->required();
    sample->add_option("--prompt", m_prompt, "space-separated tokens (default: pose person's)");
    sample->add_option("--n", m_n, "number of samples");
    sample->add_option("--guidance", m_guidance, "guidance scale");
    sample->add_option("--seed", m_seed);
    sample->add_option("--steps", m_steps, "DDIM steps");
    sample->add_option("--out", m_out)->required();

    // eval
    auto* eval = app.add_subcommand("eval", "run the metric suite over a dataset");
    std::string e_ckpt, e_data, e_variant = "full", e_out, e_split = "val";
    double e_guidance = 3.0;
    uint64_t e_seed = 0;
    eval->add_option("--ckpt", e_ckpt)->required();
    eval->add_option("--data", e_data)->required();
    eval->add_option("--variant", e_variant, "full|no-se|se-c|no-sc");
    eval->add_option("--out", e_out, "report path")->required();
    eval->add_option("--split", e_split, "val|train|all");
    eval->add_option("--guidance", e_guidance);
    eval->add_option("--seed", e_seed);

    // bias-probe
    auto* probe = app.add_subcommand("bias-probe", "compare paired vs cross-paired checkpoints");
    std::string p_paired, p_cross, p_data, p_out;
    uint64_t p_seed = 0;
    probe->add_option("--paired", p_paired)->required();
    probe->add_option("--cross", p_cross)->required();
    probe->add_option("--data", p_data)->required();
    probe->add_option("--out", p_out)->required();
    probe->add_option("--seed", p_seed);

    // gradcheck
    app.add_subcommand("gradcheck", "run the 64-bit finite-difference suite");

    CLI11_PARSE(app, argc, argv);

    try {
        json cfg = load_config_file(config_path);
        if (synth->parsed()) {
            apply_config(synth, cfg, "--persons", "persons", s_persons);
            apply_config(synth, cfg, "--garments", "garments", s_garments);
            apply_config(synth, cfg, "--mode", "mode", s_mode);
            apply_config(synth, cfg, "--seed", "seed", s_seed);
            apply_config(synth, cfg, "--size", "size", s_size);
            apply_config(synth, cfg, "--k", "k", s_k);
            return cmd_synth(s_out, s_persons, s_garments, s_mode, s_seed, s_size, s_k, command);
        }
        if (train->parsed()) {
            apply_config(train, cfg, "--preset", "preset", t_preset);
            tc = nct::train_preset(t_preset, t_stage);
            if (train->count("--lr")) tc.lr = t_lr;
            else if (cfg.contains("lr")) tc.lr = cfg.at("lr").get<double>();
            if (train->count("--weight-decay")) tc.weight_decay = t_wd;
            else if (cfg.contains("weight_decay")) tc.weight_decay = cfg.at("weight_decay").get<double>();
            if (train->count("--steps")) tc.steps = t_steps;
            else if (cfg.contains("steps")) tc.steps = cfg.at("steps").get<int>();
            if (train->count("--batch")) tc.batch = t_batch;
            else if (cfg.contains("batch")) tc.batch = cfg.at("batch").get<int>();
            if (train->count("--cond-drop")) tc.cond_drop = t_drop;
            else if (cfg.contains("cond_drop")) tc.cond_drop = cfg.at("cond_drop").get<double>();
            if (train->count("--size")) tc.image_size = t_size;
            else if (cfg.contains("image_size")) tc.image_size = cfg.at("image_size").get<int>();
            if (train->count("--seed")) tc.seed = t_seed;
            else if (cfg.contains("seed")) tc.seed = cfg.at("seed").get<uint64_t>();
            tc.allow_bias = t_allow_bias;
            return cmd_train(tc, t_data, t_init, t_out, command);
        }
        if (sample->parsed()) {
            apply_config(sample, cfg, "--guidance", "guidance", m_guidance);
            apply_config(sample, cfg, "--seed", "seed", m_seed);
            apply_config(sample, cfg, "--steps", "ddim_steps", m_steps);
            return cmd_sample(m_ckpt, m_data, m_garment, m_pose, m_prompt, m_n, m_guidance,
                              m_seed, m_steps, m_out, command);
        }
        if (eval->parsed()) {
            apply_config(eval, cfg, "--guidance", "guidance", e_guidance);
            apply_config(eval, cfg, "--seed", "seed", e_seed);
            return cmd_eval(e_ckpt, e_data, e_variant, e_out, e_split, e_guidance, e_seed,
                            command);
        }
        if (probe->parsed()) {
            apply_config(probe, cfg, "--seed", "seed", p_seed);
            return cmd_bias_probe(p_paired, p_cross, p_data, p_out, p_seed, command);
        }
        if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();
    } catch (const nct::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const nct::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
