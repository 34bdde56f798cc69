"""Modules package"""
