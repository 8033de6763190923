#include "emorec/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "emorec/emt1.hpp"

namespace emorec {

using nlohmann::json;

namespace {

json config_json(const ModelConfig& cfg) {
    json j;
    j["classes"] = cfg.classes;
    j["beta"] = cfg.beta;
    j["lambda1"] = cfg.lambda1;
    j["lambda2"] = cfg.lambda2;
    j["mu"] = cfg.mu;
    j["context3_mode"] = cfg.context3_mode == Context3Mode::Depth ? "depth" : "gcn";
    j["fusion_mode"] =
        cfg.fusion_mode == FusionMode::Multiplicative ? "multiplicative" : "additive";
    j["enabled_contexts"] = std::vector<int>(cfg.enabled_contexts.begin(),
                                             cfg.enabled_contexts.end());
    j["abn_aux_loss"] = cfg.abn_aux_loss;
    j["lr"] = cfg.lr;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["image_size"] = cfg.image_size;
    j["image_channels"] = cfg.image_channels;
    j["gait_frames"] = cfg.gait_frames;
    j["widths"] = {
        {"face_conv", cfg.widths.face_conv},     {"face_fc", cfg.widths.face_fc},
        {"gait_channels", cfg.widths.gait_channels}, {"abn_channels", cfg.widths.abn_channels},
        {"depth_channels", cfg.widths.depth_channels}, {"gcn_hidden", cfg.widths.gcn_hidden},
    };
    return j;
}

ModelConfig config_from(const json& j) {
    ModelConfig cfg;
    try {
        if (j.contains("classes")) cfg.classes = j["classes"].get<std::size_t>();
        if (j.contains("beta")) cfg.beta = j["beta"].get<double>();
        if (j.contains("lambda1")) cfg.lambda1 = j["lambda1"].get<double>();
        if (j.contains("lambda2")) cfg.lambda2 = j["lambda2"].get<double>();
        if (j.contains("mu")) cfg.mu = j["mu"].get<double>();
        if (j.contains("context3_mode")) {
            const std::string m = j["context3_mode"].get<std::string>();
            if (m == "depth")
                cfg.context3_mode = Context3Mode::Depth;
            else if (m == "gcn")
                cfg.context3_mode = Context3Mode::Gcn;
            else
                throw ValidationError("config: context3_mode must be 'depth' or 'gcn'");
        }
        if (j.contains("fusion_mode")) {
            const std::string m = j["fusion_mode"].get<std::string>();
            if (m == "multiplicative")
                cfg.fusion_mode = FusionMode::Multiplicative;
            else if (m == "additive")
                cfg.fusion_mode = FusionMode::Additive;
            else
                throw ValidationError("config: fusion_mode must be 'multiplicative' or 'additive'");
        }
        if (j.contains("enabled_contexts")) {
            cfg.enabled_contexts.clear();
            for (int c : j["enabled_contexts"].get<std::vector<int>>())
                cfg.enabled_contexts.insert(c);
        }
        if (j.contains("abn_aux_loss")) cfg.abn_aux_loss = j["abn_aux_loss"].get<bool>();
        if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
        if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("epochs")) cfg.epochs = j["epochs"].get<std::size_t>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
        if (j.contains("threads")) cfg.threads = j["threads"].get<std::size_t>();
        if (j.contains("image_size")) cfg.image_size = j["image_size"].get<std::size_t>();
        if (j.contains("image_channels"))
            cfg.image_channels = j["image_channels"].get<std::size_t>();
        if (j.contains("gait_frames")) cfg.gait_frames = j["gait_frames"].get<std::size_t>();
        if (j.contains("widths")) {
            const auto& w = j["widths"];
            if (w.contains("face_conv"))
                cfg.widths.face_conv = w["face_conv"].get<std::vector<std::size_t>>();
            if (w.contains("face_fc"))
                cfg.widths.face_fc = w["face_fc"].get<std::vector<std::size_t>>();
            if (w.contains("gait_channels"))
                cfg.widths.gait_channels = w["gait_channels"].get<std::vector<std::size_t>>();
            if (w.contains("abn_channels"))
                cfg.widths.abn_channels = w["abn_channels"].get<std::vector<std::size_t>>();
            if (w.contains("depth_channels"))
                cfg.widths.depth_channels = w["depth_channels"].get<std::vector<std::size_t>>();
            if (w.contains("gcn_hidden"))
                cfg.widths.gcn_hidden = w["gcn_hidden"].get<std::vector<std::size_t>>();
        }
    } catch (const json::exception& e) {
        throw ValidationError("config: bad JSON: " + std::string(e.what()));
    }
    cfg.validate();
    return cfg;
}

std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (c == '/' || c == '\\' || c == '#') c = '_';
    return out;
}

} // namespace

std::string config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(2); }

ModelConfig config_from_json(const std::string& text) {
    try {
        return config_from(json::parse(text));
    } catch (const json::exception& e) {
        throw ValidationError("config: invalid JSON: " + std::string(e.what()));
    }
}

void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg,
                     const std::vector<std::pair<std::string, Tensor<float>>>& params,
                     bool force) {
    if (std::filesystem::exists(dir / "index.json") && !force)
        throw ValidationError("checkpoint: " + dir.string() +
                              " already holds a checkpoint (use force to overwrite)");
    std::filesystem::create_directories(dir);
    json index;
    index["config"] = config_json(cfg);
    index["params"] = json::object();
    for (const auto& [name, tensor] : params) {
        const std::string file = sanitize(name) + ".emt1";
        write_emt1(dir / file, tensor);
        index["params"][name] = file;
    }
    std::ofstream out(dir / "index.json");
    if (!out) throw ValidationError("checkpoint: cannot write " + (dir / "index.json").string());
    out << index.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "index.json");
    if (!in) throw ValidationError("checkpoint: cannot open " + (dir / "index.json").string());
    json index;
    try {
        index = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("checkpoint: invalid index.json: " + std::string(e.what()));
    }
    LoadedCheckpoint ck;
    ck.config = config_from(index.at("config"));
    for (const auto& [name, file] : index.at("params").items())
        ck.params.emplace(name, read_emt1(dir / file.get<std::string>()).as_f32());
    return ck;
}

} // namespace emorec
