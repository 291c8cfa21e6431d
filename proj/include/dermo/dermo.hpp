#pragma once

#include "dermo/augment.hpp"
#include "dermo/backbone.hpp"
#include "dermo/checkpoint.hpp"
#include "dermo/config.hpp"
#include "dermo/dataset.hpp"
#include "dermo/ensemble.hpp"
#include "dermo/errors.hpp"
#include "dermo/evaluation.hpp"
#include "dermo/image.hpp"
#include "dermo/label_space.hpp"
#include "dermo/loss.hpp"
#include "dermo/probabilities.hpp"
#include "dermo/synthetic.hpp"
#include "dermo/training.hpp"
