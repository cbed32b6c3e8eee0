"""Dense-tensor neural network engine with explicit backpropagation."""
