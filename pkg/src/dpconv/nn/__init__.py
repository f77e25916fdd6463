"""Network pieces: layers, generator, discriminator, optimizer, training and checkpoints."""
