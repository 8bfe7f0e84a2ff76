"""Plant/controller co-design with LQR feedback and adjoint design gradients."""
