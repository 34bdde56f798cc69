"""Dataset records, generation, manifest and CSV tables"""
from .records import BandRecord, make_record
from .dataset import Dataset, RecordTask, class_id_for, file_sha256, gen_data, plan_records
from .tables import read_header, read_table, write_table

__all__ = ['BandRecord', 'make_record',
           'Dataset', 'RecordTask', 'class_id_for', 'file_sha256', 'gen_data', 'plan_records',
           'read_header', 'read_table', 'write_table']
