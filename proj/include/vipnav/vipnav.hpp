#pragma once

#include "vipnav/agent.hpp"
#include "vipnav/command.hpp"
#include "vipnav/dataset.hpp"
#include "vipnav/depth_noise.hpp"
#include "vipnav/edge_detect.hpp"
#include "vipnav/featmap.hpp"
#include "vipnav/image.hpp"
#include "vipnav/metrics.hpp"
#include "vipnav/network.hpp"
#include "vipnav/representation.hpp"
#include "vipnav/rng.hpp"
#include "vipnav/scene.hpp"
#include "vipnav/semantic.hpp"
#include "vipnav/sim.hpp"
#include "vipnav/train.hpp"
