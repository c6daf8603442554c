# FCN-8 style decoder
