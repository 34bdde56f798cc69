"""BandINR - Source Package"""
