#pragma once

// A small cascade trained once per test binary.

#include "toad/gan.hpp"

namespace toy {

inline toad::TokenAlphabet alphabet() { return toad::TokenAlphabet({{'-', "sky", 0}, {'X', "ground", 1}}); }

inline toad::LevelGrid level(int h = 16, int w = 32) {
    toad::LevelGrid g(h, w);
    for (int c = 0; c < w; ++c) {
        g.at(h - 1, c) = 1;
        g.at(h - 2, c) = c % 7 < 4;
        if (c % 9 == 3) g.at(h / 2, c) = 1;
    }
    return g;
}

inline const toad::CascadeModel& model() {
    static const toad::CascadeModel m = [] {
        toad::TrainConfig cfg;
        cfg.steps_per_scale = 30;
        cfg.rng_seed = 5;
        toad::NetConfig net;
        net.filters = 8;
        return toad::train_cascade(level(), alphabet(), toad::ScaleSchedule{{0.5, 0.75, 1.0}}, net, cfg);
    }();
    return m;
}

}  // namespace toy
