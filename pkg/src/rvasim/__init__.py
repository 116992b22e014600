"""Simulator of an ultrasound-guided robotic vascular access procedure."""
