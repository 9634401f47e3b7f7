#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "duet/common.hpp"
#include "duet/trainer.hpp"

// key = value configuration files shared by the command-line tools. Unknown
// keys are rejected; command-line overrides take precedence over the file,
// which takes precedence over built-in defaults.

namespace duet {

class ConfigMap {
public:
    static ConfigMap from_text(const std::string& text) {
        ConfigMap m;
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            // trim
            const size_t b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            const size_t e = line.find_last_not_of(" \t\r");
            line = line.substr(b, e - b + 1);
            const size_t eq = line.find('=');
            check(eq != std::string::npos,
                  "config line " + std::to_string(lineno) + ": expected key = value");
            m.set(trim_(line.substr(0, eq)), trim_(line.substr(eq + 1)));
        }
        return m;
    }

    static ConfigMap from_file(const std::string& path) {
        return from_text(read_text_file(path));
    }

    void set(const std::string& key, const std::string& value) {
        check(!key.empty(), "config: empty key");
        values_[key] = value;
    }

    // "key=value" command-line override
    void set_override(const std::string& kv) {
        const size_t eq = kv.find('=');
        check(eq != std::string::npos, "override '" + kv + "' is not key=value");
        set(trim_(kv.substr(0, eq)), trim_(kv.substr(eq + 1)));
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    float get_float(const std::string& key, float fallback) {
        if (!has(key)) return fallback;
        consumed_.insert(key);
        try {
            return std::stof(values_.at(key));
        } catch (const std::exception&) {
            fail("config: key '" + key + "' has non-numeric value '" + values_.at(key) + "'");
        }
    }

    int get_int(const std::string& key, int fallback) {
        if (!has(key)) return fallback;
        consumed_.insert(key);
        try {
            return std::stoi(values_.at(key));
        } catch (const std::exception&) {
            fail("config: key '" + key + "' has non-integer value '" + values_.at(key) + "'");
        }
    }

    uint64_t get_u64(const std::string& key, uint64_t fallback) {
        if (!has(key)) return fallback;
        consumed_.insert(key);
        try {
            return std::stoull(values_.at(key));
        } catch (const std::exception&) {
            fail("config: key '" + key + "' has non-integer value '" + values_.at(key) + "'");
        }
    }

    std::string get_string(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        consumed_.insert(key);
        return values_.at(key);
    }

    // every provided key must have been consumed by a getter
    void reject_unknown() const {
        for (const auto& [key, value] : values_)
            if (!consumed_.count(key)) fail("config: unknown key '" + key + "'");
    }

    const std::map<std::string, std::string>& raw() const { return values_; }

private:
    static std::string trim_(const std::string& s) {
        const size_t b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const size_t e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

// reads every TrainConfig / LossWeights / model field from the map
inline TrainConfig train_config_from(ConfigMap& m, const TrainConfig& defaults = {}) {
    TrainConfig c = defaults;
    c.batch_size = m.get_int("batch_size", c.batch_size);
    c.epochs = m.get_int("epochs", c.epochs);
    c.max_lr = m.get_float("max_lr", c.max_lr);
    c.warmup_epochs = m.get_int("warmup_epochs", c.warmup_epochs);
    c.adam_beta1 = m.get_float("adam_beta1", c.adam_beta1);
    c.adam_beta2 = m.get_float("adam_beta2", c.adam_beta2);
    c.weight_decay = m.get_float("weight_decay", c.weight_decay);
    c.grad_clip = m.get_float("grad_clip", c.grad_clip);
    c.null_cond_prob = m.get_float("null_cond_prob", c.null_cond_prob);
    c.p2p_finetune_prob = m.get_float("p2p_finetune_prob", c.p2p_finetune_prob);
    c.T = m.get_int("T", c.T);
    c.seed = m.get_u64("seed", c.seed);
    c.val_every = m.get_int("val_every", c.val_every);
    c.loss.lambda_vel = m.get_float("lambda_vel", c.loss.lambda_vel);
    c.loss.lambda_foot = m.get_float("lambda_foot", c.loss.lambda_foot);
    c.loss.lambda_bl = m.get_float("lambda_bl", c.loss.lambda_bl);
    c.loss.lambda_dm = m.get_float("lambda_dm", c.loss.lambda_dm);
    c.loss.lambda_ro = m.get_float("lambda_ro", c.loss.lambda_ro);
    c.loss.lambda_reg = m.get_float("lambda_reg", c.loss.lambda_reg);
    c.loss.t_bar_fraction = m.get_float("t_bar_fraction", c.loss.t_bar_fraction);
    c.loss.dm_threshold = m.get_float("dm_threshold", c.loss.dm_threshold);
    c.model.n_joints = m.get_int("n_joints", c.model.n_joints);
    c.model.d_model = m.get_int("d_model", c.model.d_model);
    c.model.n_blocks = m.get_int("n_blocks", c.model.n_blocks);
    c.model.n_heads = m.get_int("n_heads", c.model.n_heads);
    c.model.ff_mult = m.get_int("ff_mult", c.model.ff_mult);
    c.model.n_labels = m.get_int("n_labels", c.model.n_labels);
    c.model.T = c.T;
    return c;
}

inline std::string train_config_to_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "batch_size = " << c.batch_size << "\n";
    os << "epochs = " << c.epochs << "\n";
    os << "max_lr = " << c.max_lr << "\n";
    os << "warmup_epochs = " << c.warmup_epochs << "\n";
    os << "adam_beta1 = " << c.adam_beta1 << "\n";
    os << "adam_beta2 = " << c.adam_beta2 << "\n";
    os << "weight_decay = " << c.weight_decay << "\n";
    os << "grad_clip = " << c.grad_clip << "\n";
    os << "null_cond_prob = " << c.null_cond_prob << "\n";
    os << "p2p_finetune_prob = " << c.p2p_finetune_prob << "\n";
    os << "T = " << c.T << "\n";
    os << "seed = " << c.seed << "\n";
    os << "val_every = " << c.val_every << "\n";
    os << "lambda_vel = " << c.loss.lambda_vel << "\n";
    os << "lambda_foot = " << c.loss.lambda_foot << "\n";
    os << "lambda_bl = " << c.loss.lambda_bl << "\n";
    os << "lambda_dm = " << c.loss.lambda_dm << "\n";
    os << "lambda_ro = " << c.loss.lambda_ro << "\n";
    os << "lambda_reg = " << c.loss.lambda_reg << "\n";
    os << "t_bar_fraction = " << c.loss.t_bar_fraction << "\n";
    os << "dm_threshold = " << c.loss.dm_threshold << "\n";
    os << "n_joints = " << c.model.n_joints << "\n";
    os << "d_model = " << c.model.d_model << "\n";
    os << "n_blocks = " << c.model.n_blocks << "\n";
    os << "n_heads = " << c.model.n_heads << "\n";
    os << "ff_mult = " << c.model.ff_mult << "\n";
    os << "n_labels = " << c.model.n_labels << "\n";
    return os.str();
}

}  // namespace duet
