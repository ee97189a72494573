// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

// Trains a small compressed translation-mode classifier on synthetic shapes
// and prints per-epoch accuracy.

#include <gccpc/nn/train.hpp>

#include <iostream>

int main()
{
    using namespace gccpc;
    const nn::Dataset data = nn::synthetic_dataset(4, 48, 256, 1);

    nn::NetworkConfig cfg;
    cfg.channels = {16, 24, 32};
    cfg.points = 256;
    cfg.initial_spacing = 0.05;
    cfg.classes = data.classes;
    cfg.cluster.representatives = 32;

    nn::Classifier net(cfg, 7);
    nn::TrainOptions opt;
    opt.epochs = 4;
    opt.log = [](const std::string& line) { std::cout << line << '\n'; };
    const nn::TrainResult r = nn::train_classifier(net, data, opt);
    std::cout << "final test accuracy " << r.final_test_acc.value_or(0.0) << '\n';
}
