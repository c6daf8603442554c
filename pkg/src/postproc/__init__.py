# Region post-processing, forest and video voting
